"""Standard Successive Constraint Method for ``sigma_min(M(P))``.

With ``M(P) = sum_j theta_j M_j`` the squared stability factor is the minimum
of ``J(P, y) = sum_{j<=m} (2 - delta_jm) theta_j theta_m y_jm`` over the
Rayleigh quotients ``y_jm = v^*(M_j^* M_m)^H v / v^*v``. Upper bounds restrict
``y`` to vectors seen at stored points; lower bounds relax ``y`` to a box cut
by the constraints ``J(P_l, y) >= sigma_min(P_l)^2`` of nearby stored points.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..affine import AffineMatrix, ParameterGrid, ParameterPoint
from .eigen import block_partition, hermitian_part_extremes, smallest_sigma
from .lp import INFEASIBLE, OPTIMAL, LPInfeasibleError, solve_lp_batch

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def term_pairs(Q: int) -> list[tuple[int, int]]:
    return [(j, m) for j in range(Q) for m in range(j, Q)]


def pair_coefficients(theta: np.ndarray) -> np.ndarray:
    """Objective rows ``(2 - delta_jm) theta_j theta_m``, shape ``(N, Q(Q+1)/2)``."""
    theta = np.atleast_2d(theta)
    Q = theta.shape[1]
    j, m = np.triu_indices(Q)
    return np.where(j == m, 1.0, 2.0) * theta[:, j] * theta[:, m]


def rayleigh_vector(M: AffineMatrix, v: np.ndarray) -> np.ndarray:
    """``y_jm(v)`` for all pairs ``j <= m``."""
    U = np.column_stack([Mj @ v for Mj in M.matrices])
    G = (U.conj().T @ U).real / np.vdot(v, v).real
    j, m = np.triu_indices(M.Q)
    return G[j, m]


def rayleigh_bounds(M: AffineMatrix, **kw) -> tuple[np.ndarray, np.ndarray]:
    """Extreme eigenvalues of ``(M_j^* M_m)^H`` for every pair."""
    lo, hi = [], []
    for j, m in term_pairs(M.Q):
        X = (M.matrices[j].conj().T @ M.matrices[m]).tocsc()
        a, b = hermitian_part_extremes(X, **kw)
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def nearest_neighbors(query: np.ndarray, stored: np.ndarray, k: int | None) -> np.ndarray:
    """Indices of the ``min(k, len(stored))`` Euclidean nearest stored points (stable in ties)."""
    query = np.atleast_2d(query)
    if len(stored) == 0:
        return np.zeros((len(query), 0), dtype=np.int64)
    dist = np.linalg.norm(query[:, None, :] - stored[None, :, :], axis=2)
    kk = len(stored) if k is None else min(k, len(stored))
    return np.argsort(dist, axis=1, kind="stable")[:, :kk]


def relative_gap(upper2: np.ndarray, lower2: np.ndarray) -> np.ndarray:
    """``(UB^2 - LB~^2) / UB^2``; zero where ``UB = 0`` and one before any point is stored."""
    upper2 = np.asarray(upper2, dtype=float)
    out = np.ones_like(upper2)
    fin = np.isfinite(upper2)
    pos = fin & (upper2 > 0)
    out[pos] = (upper2[pos] - lower2[pos]) / upper2[pos]
    out[fin & (upper2 <= 0)] = 0.0
    return out


class NeighborhoodLP:
    """LP lower bounds over a fixed point set, updated as constraints are added.

    Point ``i`` minimizes ``objective[i].y`` over the box, constrained by the
    stored rows of its ``min(k, M_alpha)`` nearest stored points. Adding a row
    only re-solves the points whose neighbour set it enters, and of those only
    the ones whose current minimizer violates it when no row left the set.
    """

    def __init__(self, objective, coords, lower, upper, M_alpha: int | None):
        self.objective = np.asarray(objective, dtype=float)
        self.coords = np.asarray(coords, dtype=float)
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.M_alpha = M_alpha
        N = len(self.objective)
        self.argmins = np.where(self.objective > 0, self.lower, self.upper)
        self.values = np.einsum("ij,ij->i", self.objective, self.argmins)
        self.rows = np.zeros((0, self.objective.shape[1]))
        self.rhs = np.zeros(0)
        self.stored = np.zeros((0, self.coords.shape[1]))
        self._nbr = np.zeros((N, 0), dtype=np.int64)
        self._dist = np.zeros((N, 0))

    def add(self, coord, row, rhs) -> int:
        """Store a constraint ``row.y >= rhs`` located at ``coord``; returns the number of re-solved points."""
        self.stored = np.vstack([self.stored, coord])
        self.rows = np.vstack([self.rows, row])
        self.rhs = np.append(self.rhs, rhs)
        k = len(self.rhs)
        if self.M_alpha is None or self._nbr.shape[1] < self.M_alpha:
            changed = np.arange(len(self.coords))
        else:
            d_new = np.linalg.norm(self.coords - np.asarray(coord), axis=1)
            changed = np.flatnonzero(d_new < self._dist[:, -1])
        if len(changed) == 0:
            return 0
        kk = k if self.M_alpha is None else min(self.M_alpha, k)
        grew = self._nbr.shape[1] < kk  # no row leaves any neighbour set
        dist = np.linalg.norm(self.coords[changed, None, :] - self.stored[None, :, :], axis=2)
        order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
        if self._nbr.shape[1] < kk:
            pad = kk - self._nbr.shape[1]
            self._nbr = np.pad(self._nbr, ((0, 0), (0, pad)), constant_values=-1)
            self._dist = np.pad(self._dist, ((0, 0), (0, pad)), constant_values=np.inf)
        self._nbr[changed] = order
        self._dist[changed] = np.take_along_axis(dist, order, axis=1)
        if grew:
            # an optimum that already satisfies the new row stays optimal
            row = np.asarray(row, dtype=float)
            slack = self.argmins[changed] @ row - rhs
            changed = changed[slack < 0]
            if len(changed) == 0:
                return 0
        vals, z, status = solve_lp_batch(
            self.objective[changed], self.lower, self.upper, self.rows, self.rhs, self._nbr[changed]
        )
        _check_status(status)
        self.values[changed] = vals
        self.argmins[changed] = z
        return len(changed)


@dataclass
class SCMState:
    """Stored points with exact stability factors and their Rayleigh vectors."""

    coords: np.ndarray  # (k, d+1) raw (omega, p)
    sigmas: np.ndarray  # (k,)
    y: np.ndarray  # (k, Q(Q+1)/2)
    rows: np.ndarray  # (k, Q(Q+1)/2) constraint rows J(P_l, .)
    lam_min: np.ndarray
    lam_max: np.ndarray
    M_alpha: int | None = 20
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.sigmas)

    @property
    def points(self) -> list[ParameterPoint]:
        return [ParameterPoint(c[0], tuple(c[1:])) for c in self.coords]


def _as_grid(P) -> ParameterGrid:
    if isinstance(P, ParameterPoint):
        return ParameterGrid([P.omega], np.array([P.p], dtype=float).reshape(1, -1))
    return P


def upper_squared(state: SCMState, pc: np.ndarray) -> np.ndarray:
    if state.k == 0:
        return np.full(len(pc), np.inf)
    return (pc @ state.y.T).min(axis=1)


def lower_squared(state: SCMState, pc: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Raw LP values ``sigma~_LB^2`` (may be negative)."""
    nbr = nearest_neighbors(coords, state.coords, state.M_alpha)
    vals, _, status = solve_lp_batch(
        pc, state.lam_min, state.lam_max, state.rows, state.sigmas**2, nbr
    )
    _check_status(status)
    return vals


def _check_status(status):
    if np.any(status == INFEASIBLE):
        raise LPInfeasibleError("SCM lower-bound LP infeasible: inconsistent stored stability data")
    if np.any(status != OPTIMAL):
        raise RuntimeError("SCM lower-bound LP hit the simplex iteration limit")


def scm_upper(state: SCMState, M: AffineMatrix, P) -> np.ndarray | float:
    """``sigma_min^UB(P)``."""
    pc = pair_coefficients(M.coefficients(_as_grid(P)))
    ub = np.sqrt(np.maximum(upper_squared(state, pc), 0.0))
    return float(ub[0]) if isinstance(P, ParameterPoint) else ub


def scm_lower(state: SCMState, M: AffineMatrix, P, squared: bool = False) -> np.ndarray | float:
    """``sigma_min^LB(P) = sqrt(max(0, LP value))``; with ``squared`` the raw LP value."""
    grid = _as_grid(P)
    vals = lower_squared(state, pair_coefficients(M.coefficients(grid)), grid.coords())
    out = vals if squared else np.sqrt(np.maximum(vals, 0.0))
    return float(out[0]) if isinstance(P, ParameterPoint) else out


def seed_index(theta: np.ndarray) -> int:
    """First training point: largest coefficient norm."""
    return int(np.argmax(np.linalg.norm(theta, axis=1)))


@dataclass
class SCMTraining:
    state: SCMState
    upper: np.ndarray  # sigma UB on the training grid
    lower: np.ndarray  # sigma LB on the training grid
    gap: np.ndarray
    selected: list[int]


def scm_train(
    M: AffineMatrix,
    grid: ParameterGrid,
    eps: float = 0.8,
    M_alpha: int | None = 20,
    max_iter: int | None = None,
    eig_kw: dict | None = None,
) -> SCMTraining:
    """Greedy SCM: enrich at the largest relative gap until ``max gap <= eps``."""
    if len(grid) == 0:
        raise ValueError("empty training grid")
    eig_kw = eig_kw or {}
    theta = M.coefficients(grid)
    pc = pair_coefficients(theta)
    coords = grid.coords()
    N = len(grid)
    lam_min, lam_max = rayleigh_bounds(M, **{k: v for k, v in eig_kw.items() if k == "dense_max"})
    blocks = block_partition(M.pattern())
    nq = pc.shape[1]
    state = SCMState(np.zeros((0, coords.shape[1])), np.zeros(0), np.zeros((0, nq)), np.zeros((0, nq)),
                     lam_min, lam_max, M_alpha)

    up2 = np.full(N, np.inf)
    bound = NeighborhoodLP(pc, coords, lam_min, lam_max, M_alpha)
    selected: list[int] = []
    cap = N if max_iter is None else max_iter
    while True:
        gap = relative_gap(up2, bound.values)
        gmax = float(gap.max())
        state.history.append(gmax)
        if gmax <= eps:
            break
        if len(selected) >= cap:
            log.warning("SCM stopped at iteration cap %d with max gap %.3g", cap, gmax)
            break
        i = seed_index(theta) if not selected else int(np.argmax(gap))
        if i in selected:
            log.warning("SCM stagnated: argmax %d already stored (gap %.3g)", i, gmax)
            break
        sig, v = smallest_sigma(M.assemble(theta[i]), blocks=blocks, **eig_kw)
        y = rayleigh_vector(M, v)
        selected.append(i)
        state.coords = np.vstack([state.coords, coords[i]])
        state.sigmas = np.append(state.sigmas, sig)
        state.y = np.vstack([state.y, y])
        state.rows = np.vstack([state.rows, pc[i]])
        up2 = np.minimum(up2, pc @ y)
        nchanged = bound.add(coords[i], pc[i], sig**2)
        log.info("SCM iter %d: point %d sigma=%.6g max gap %.4g (%d LPs)",
                 state.k, i, sig, gmax, nchanged)
    low2 = bound.values
    gap = relative_gap(up2, low2)
    return SCMTraining(state, np.sqrt(np.maximum(up2, 0)), np.sqrt(np.maximum(low2, 0)), gap, selected)
