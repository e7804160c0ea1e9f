"""Natural-norm SCM with a frequency-subdomain decomposition.

Around an anchor ``Pbar`` the quantity

    beta(P, Pbar) = inf_v  v^*(Mbar^* M(P))^H v / ||Mbar v||^2

is affine in the coefficients of ``M(P)``:
``beta = inf_v sum_j theta_j(P) z_j(v)`` with
``z_j(v) = Re<Mbar v, M_j v> / ||Mbar v||^2`` and ``|z_j| <= sigma_max(M_j) / sigma_min(Mbar)``.
Since ``beta(P, Pbar) sigma_min(Pbar) <= sigma_min(P)``, LP lower bounds on
``beta`` against each anchor give certified lower bounds on ``sigma_min``.
One independent model is trained per frequency subdomain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..affine import AffineMatrix, ParameterGrid, ParameterPoint, subdomain_of
from .eigen import beta_pencil, block_partition, largest_sigma, smallest_sigma
from .scm import (
    NeighborhoodLP,
    TrainingError,
    _check_status,
    nearest_neighbors,
    pair_coefficients,
    rayleigh_vector,
    relative_gap,
    seed_index,
)
from .lp import solve_lp_batch

log = logging.getLogger(__name__)

SIGMA_MAX_INFLATION = 1.01


def z_vector(M: AffineMatrix, Mbar, v: np.ndarray) -> np.ndarray:
    """``z_j(v) = Re<Mbar v, M_j v> / ||Mbar v||^2``."""
    u = Mbar @ v
    nrm = np.vdot(u, u).real
    return np.array([np.vdot(u, Mj @ v).real for Mj in M.matrices]) / nrm


def beta_exact(M: AffineMatrix, P: ParameterPoint, Pbar: ParameterPoint, blocks=None, **kw):
    """``(beta(P, Pbar), z(v(P, Pbar)))`` from the generalized eigenproblem."""
    Mp = M.evaluate(P)
    Mb = M.evaluate(Pbar)
    beta, v = beta_pencil(Mp, Mb, blocks=blocks, **kw)
    return beta, z_vector(M, Mb, v)


def term_norms(M: AffineMatrix, **kw) -> np.ndarray:
    """``sigma_max(M_j)`` inflated so iteration error cannot invalidate the z-box."""
    return SIGMA_MAX_INFLATION * np.array([largest_sigma(Mj, **kw) for Mj in M.matrices])


def beta_gap(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """``(beta_UB - beta_LB) / beta_UB``, zero where ``beta_UB = 0``."""
    out = np.zeros_like(upper)
    nz = upper != 0
    out[nz] = (upper[nz] - lower[nz]) / upper[nz]
    return out


@dataclass
class AnchorState:
    """One linearization point with its subsample set."""

    coords: np.ndarray  # (d+1,)
    sigma: float
    y: np.ndarray  # SCM Rayleigh vector of the anchor's singular vector
    zbox: np.ndarray  # (Q,) half-widths of the z-box
    sub_coords: np.ndarray  # (m, d+1)
    sub_rows: np.ndarray  # (m, Q) coefficients theta(P_l)
    betas: np.ndarray  # (m,)
    z: np.ndarray  # (m, Q)

    def beta_upper(self, theta: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(theta) @ self.z.T).min(axis=1)

    def beta_lower(self, theta: np.ndarray, coords: np.ndarray, M_alpha: int | None) -> np.ndarray:
        nbr = nearest_neighbors(coords, self.sub_coords, M_alpha)
        vals, _, status = solve_lp_batch(
            np.atleast_2d(theta), -self.zbox, self.zbox, self.sub_rows, self.betas, nbr
        )
        _check_status(status)
        return vals


@dataclass
class NNSCMState:
    """Trained natural-norm SCM on one frequency subdomain."""

    subdomain: int
    omega_range: tuple[float, float]
    anchors: list[AnchorState]
    M_alpha: int | None = 20
    inside: bool = True
    phi: float = 0.0
    eps: float = 0.6
    eps_beta: float = 0.99
    history: list[float] = field(default_factory=list)

    def sigma_upper2(self, theta: np.ndarray) -> np.ndarray:
        Y = np.array([a.y for a in self.anchors])
        return (pair_coefficients(theta) @ Y.T).min(axis=1)

    def sigma_lower(self, theta: np.ndarray, coords: np.ndarray) -> np.ndarray:
        lb = np.zeros(len(theta))
        for a in self.anchors:
            lb = np.maximum(lb, a.beta_lower(theta, coords, self.M_alpha) * a.sigma)
        return lb


def beta_upper(anchor: AnchorState, M: AffineMatrix, P) -> float:
    return float(anchor.beta_upper(M.coefficients(P))[0])


def beta_lower(anchor: AnchorState, M: AffineMatrix, P, M_alpha: int | None = 20) -> float:
    return float(anchor.beta_lower(M.coefficients(P), P.as_array(), M_alpha)[0])


def _train_anchor(M, theta, coords, a, blocks, znorm, eps_beta, M_alpha, inside, phi, eig_kw):
    """Inner loop: grow the subsample set of anchor ``a`` (an index into ``theta``)."""
    N = len(theta)
    Mbar = M.assemble(theta[a])
    sigma, vbar = smallest_sigma(Mbar, blocks=blocks, **eig_kw)
    zbox = znorm / sigma
    anchor = AnchorState(
        coords[a].copy(), sigma, rayleigh_vector(M, vbar), zbox,
        np.zeros((0, coords.shape[1])), np.zeros((0, theta.shape[1])), np.zeros(0),
        np.zeros((0, theta.shape[1])),
    )
    bound = NeighborhoodLP(theta, coords, -zbox, zbox, M_alpha)
    members: list[int] = []

    def add(i, beta, z):
        members.append(i)
        anchor.sub_coords = np.vstack([anchor.sub_coords, coords[i]])
        anchor.sub_rows = np.vstack([anchor.sub_rows, theta[i]])
        anchor.betas = np.append(anchor.betas, beta)
        anchor.z = np.vstack([anchor.z, z])
        bound.add(coords[i], theta[i], beta)

    add(a, 1.0, z_vector(M, Mbar, vbar))
    D_prev = np.zeros(N, dtype=bool)
    while True:
        ub = anchor.beta_upper(theta)
        lb = bound.values
        gap = beta_gap(ub, lb)
        D = lb > phi
        gmax_D = gap[D].max() if D.any() else -np.inf
        if np.array_equal(D, D_prev) and gmax_D < eps_beta:
            break
        picks = [int(np.argmax(gap))]
        if inside and D.any():
            i2 = int(np.flatnonzero(D)[np.argmax(gap[D])])
            if gap[i2] > eps_beta:
                picks.append(i2)
        fresh = [i for i in dict.fromkeys(picks) if i not in members]
        if not fresh:
            log.debug("anchor %d: no new subsample (gap max %.3g)", a, gap.max())
            break
        if len(members) + len(fresh) > N:
            raise TrainingError(f"anchor {a}: subsample cap {N} reached")
        for i in fresh:
            beta, v = beta_pencil(M.assemble(theta[i]), Mbar, blocks=blocks, **eig_kw)
            add(i, beta, z_vector(M, Mbar, v))
        D_prev = D
    return anchor, lb * sigma, members


def nnscm_train_subdomain(
    M: AffineMatrix,
    grid: ParameterGrid,
    subdomain: int = 1,
    omega_range: tuple[float, float] | None = None,
    eps: float = 0.6,
    eps_beta: float = 0.99,
    M_alpha: int | None = 20,
    inside: bool = True,
    phi: float = 0.0,
    znorm: np.ndarray | None = None,
    blocks=None,
    eig_kw: dict | None = None,
) -> tuple[NNSCMState, np.ndarray, np.ndarray]:
    """Outer anchor loop on one subdomain grid.

    Returns the state with the sigma lower and upper bounds over ``grid``.
    """
    eig_kw = eig_kw or {}
    theta = M.coefficients(grid)
    coords = grid.coords()
    N = len(grid)
    if znorm is None:
        znorm = term_norms(M)
    if blocks is None:
        blocks = block_partition(M.pattern())
    pc = pair_coefficients(theta)
    if omega_range is None:
        omega_range = (float(grid.omega.min()), float(grid.omega.max()))
    state = NNSCMState(subdomain, omega_range, [], M_alpha, inside, phi, eps, eps_beta)
    up2 = np.full(N, np.inf)
    lb = np.zeros(N)
    anchors_idx: list[int] = []
    while True:
        gap = relative_gap(up2, lb**2)
        gmax = float(gap.max())
        state.history.append(gmax)
        if gmax <= eps:
            break
        a = seed_index(theta) if not anchors_idx else int(np.argmax(gap))
        if a in anchors_idx:
            log.warning("subdomain %d: anchor argmax %d repeats (gap %.3g)", subdomain, a, gmax)
            break
        if len(anchors_idx) >= N:
            raise TrainingError(f"subdomain {subdomain}: anchor cap {N} reached")
        anchor, lb_a, members = _train_anchor(
            M, theta, coords, a, blocks, znorm, eps_beta, M_alpha, inside, phi, eig_kw
        )
        anchors_idx.append(a)
        state.anchors.append(anchor)
        up2 = np.minimum(up2, pc @ anchor.y)
        lb = np.maximum(lb, lb_a)
        log.info("subdomain %d anchor %d: point %d sigma=%.5g, %d subsamples, max gap before %.3g",
                 subdomain, len(anchors_idx), a, anchor.sigma, len(members), gmax)
    return state, lb, np.sqrt(np.maximum(up2, 0.0))


@dataclass
class NNSCMTraining:
    states: list[NNSCMState]
    frequency_edges: np.ndarray
    lower: np.ndarray  # per training-grid point, from the subdomain that owns it
    upper: np.ndarray
    znorm: np.ndarray


def nnscm_train(
    M: AffineMatrix,
    grid: ParameterGrid,
    frequency_edges=None,
    eps: float = 0.6,
    eps_beta: float = 0.99,
    M_alpha: int | None = 20,
    inside: bool = True,
    phi: float = 0.0,
    eig_kw: dict | None = None,
) -> NNSCMTraining:
    """One NNSCM per closed frequency subdomain ``[edges[j-1], edges[j]]``."""
    if frequency_edges is None:
        frequency_edges = grid.frequency_edges
    if frequency_edges is None:
        frequency_edges = np.array([grid.omega.min(), grid.omega.max()])
        if frequency_edges[0] == frequency_edges[1]:
            frequency_edges = frequency_edges + np.array([0.0, 1.0])
    edges = np.asarray(frequency_edges, dtype=float)
    grid = grid.with_edges(edges)
    znorm = term_norms(M, **{k: v for k, v in (eig_kw or {}).items() if k == "dense_max"})
    blocks = block_partition(M.pattern())
    owner = grid.subdomain_index()
    lower = np.zeros(len(grid))
    upper = np.zeros(len(grid))
    states = []
    for j in range(1, len(edges)):
        idx = grid.subdomain(j, closed=True)
        if len(idx) == 0:
            raise TrainingError(f"frequency subdomain {j} has no training points")
        state, lb, ub = nnscm_train_subdomain(
            M, grid.subset(idx), j, (edges[j - 1], edges[j]), eps, eps_beta, M_alpha, inside, phi,
            znorm, blocks, eig_kw,
        )
        states.append(state)
        own = owner[idx] == j
        lower[idx[own]] = lb[own]
        upper[idx[own]] = ub[own]
    return NNSCMTraining(states, edges, lower, upper, znorm)


def nnscm_lower(states: list[NNSCMState], edges, M: AffineMatrix, grid: ParameterGrid) -> np.ndarray:
    """Certified ``sigma_min`` lower bounds at arbitrary points inside the subdomains."""
    sub = subdomain_of(grid.omega, edges)
    theta = M.coefficients(grid)
    coords = grid.coords()
    out = np.zeros(len(grid))
    for j in np.unique(sub):
        idx = np.flatnonzero(sub == j)
        out[idx] = states[j - 1].sigma_lower(theta[idx], coords[idx])
    return out


def nnscm_upper(states: list[NNSCMState], edges, M: AffineMatrix, grid: ParameterGrid) -> np.ndarray:
    sub = subdomain_of(grid.omega, edges)
    theta = M.coefficients(grid)
    out = np.zeros(len(grid))
    for j in np.unique(sub):
        idx = np.flatnonzero(sub == j)
        out[idx] = np.sqrt(np.maximum(states[j - 1].sigma_upper2(theta[idx]), 0.0))
    return out
