"""Complex reduced basis, residual-based error estimator and weak greedy loop.

The reduced model is the Galerkin projection ``Phi^* M(P) Phi w~ = Phi^* b(P)``.
The residual ``r = b(P) - M(P) Phi w~`` is a linear combination ``U a(P)`` of
the fixed vectors ``b_i`` and ``M_j phi_k``. A thin QR factorization
``U = Q_U R_U`` is updated during enrichment, so ``||r|| = ||R_U a(P)||`` costs
nothing in ``n`` online and avoids the cancellation of the squared Gram form
``a^* U^* U a``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .affine import ParameterGrid, ParameterPoint
from .fom import ParametricLTI, solve_frequency, solve_grid

log = logging.getLogger(__name__)

REDUNDANCY_TOL = 1e-10
RANK_TOL = 1e-14
CANCELLATION_TOL = 1e-7
CHUNK = 4096


class RedundantSnapshot(ValueError):
    """The new snapshot lies in the span of the current basis."""


class StabilityError(ValueError):
    """A stability lower bound is not positive, so no error bound is available."""


class ReducedBasis:
    """Orthonormal complex basis with its projected affine terms.

    Residual components are ordered as the ``b`` terms followed by
    ``M_j phi_k`` with ``k`` major, i.e. column ``Q_b + k*Q + j``.
    """

    def __init__(self, model: ParametricLTI):
        self.model = model
        M, b, c = model.M, model.b, model.c
        n = model.n
        self.Phi = np.zeros((n, 0), dtype=complex)
        self.Mr = np.zeros((M.Q, 0, 0), dtype=complex)
        self.br = np.zeros((b.Q, 0), dtype=complex)
        self.cr = np.zeros((c.Q, 0), dtype=complex)
        self._U = np.zeros((n, 0), dtype=complex)
        self._Qu = np.zeros((n, 0), dtype=complex)
        self._Ru = np.zeros((0, 0), dtype=complex)
        self._append_components(b.as_matrix().astype(complex))
        self.selected: list[ParameterPoint] = []

    @property
    def r0(self) -> int:
        return self.Phi.shape[1]

    @property
    def residual_components(self) -> np.ndarray:
        return self._U

    @property
    def gram(self) -> np.ndarray:
        """``U^* U`` of the residual components, from the triangular factor."""
        return self._Ru.conj().T @ self._Ru

    def _append_components(self, cols: np.ndarray) -> None:
        for u in cols.T:
            h = np.zeros(self._Qu.shape[1], dtype=complex)
            v = u.copy()
            for _ in range(2):
                dh = self._Qu.conj().T @ v
                v -= self._Qu @ dh
                h += dh
            nv = np.linalg.norm(v)
            q, m = self._Ru.shape
            keep = nv > RANK_TOL * np.linalg.norm(u)
            R = np.zeros((q + keep, m + 1), dtype=complex)
            R[:q, :m] = self._Ru
            R[:q, m] = h
            if keep:
                R[q, m] = nv
                self._Qu = np.column_stack([self._Qu, v / nv])
            self._Ru = R
            self._U = np.column_stack([self._U, u])

    @classmethod
    def from_basis(cls, model: ParametricLTI, Phi: np.ndarray) -> "ReducedBasis":
        """Build from given columns (orthonormalized, redundant ones dropped)."""
        rb = cls(model)
        for k in range(Phi.shape[1]):
            try:
                rb.add_column(Phi[:, k])
            except RedundantSnapshot:
                log.debug("column %d dropped as redundant", k)
        return rb

    def add_column(self, w: np.ndarray) -> np.ndarray:
        """Orthonormalize ``w`` against ``Phi`` (two passes) and append it."""
        w = np.asarray(w, dtype=complex)
        nw = np.linalg.norm(w)
        v = w.copy()
        for _ in range(2):
            v -= self.Phi @ (self.Phi.conj().T @ v)
        nv = np.linalg.norm(v)
        if nw == 0 or nv <= REDUNDANCY_TOL * nw:
            raise RedundantSnapshot(f"snapshot redundant: relative new component {nv / max(nw, 1e-300):.2e}")
        phi = v / nv
        M, b, c = self.model.M, self.model.b, self.model.c
        Q, Qb, r = M.Q, b.Q, self.r0
        new = np.column_stack([Mj @ phi for Mj in M.matrices])

        Mr = np.zeros((Q, r + 1, r + 1), dtype=complex)
        Mr[:, :r, :r] = self.Mr
        Mr[:, :r, r] = (self.Phi.conj().T @ new).T
        old = self._U[:, Qb:].reshape(-1, r, Q) if r else np.zeros((len(phi), 0, Q))
        Mr[:, r, :r] = np.einsum("i,ikj->jk", phi.conj(), old)
        Mr[:, r, r] = phi.conj() @ new
        self.Mr = Mr
        self.br = np.column_stack([self.br, b.as_matrix().T @ phi.conj()])
        self.cr = np.column_stack([self.cr, c.as_matrix().T @ phi])

        self._append_components(new)
        self.Phi = np.column_stack([self.Phi, phi])
        return phi

    def enrich(self, P: ParameterPoint) -> np.ndarray:
        """Full solve at ``P`` and append the orthonormalized snapshot."""
        if P in self.selected:
            raise RedundantSnapshot(f"{P} already selected")
        w = solve_frequency(self.model, P).w
        self.add_column(w)
        self.selected.append(P)
        return w

    # ---- online evaluation ------------------------------------------------

    def _coefficients(self, P):
        grid = _as_grid(P)
        return grid, self.model.M.coefficients(grid), self.model.b.coefficients(grid)

    def _solve(self, thM: np.ndarray, thb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched reduced solves; rows whose reduced matrix is singular come back NaN and flagged."""
        N, r = len(thM), self.r0
        W = np.empty((N, r), dtype=complex)
        bad = np.zeros(N, dtype=bool)
        if r == 0:
            return W, bad
        for s in range(0, N, CHUNK):
            sl = slice(s, s + CHUNK)
            A = np.einsum("nq,qij->nij", thM[sl], self.Mr)
            rhs = thb[sl] @ self.br
            try:
                W[sl] = np.linalg.solve(A, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                for i in range(len(A)):
                    try:
                        W[s + i] = np.linalg.solve(A[i], rhs[i])
                    except np.linalg.LinAlgError:
                        W[s + i] = np.nan
                        bad[s + i] = True
        bad |= ~np.all(np.isfinite(W), axis=1)
        return W, bad

    def reduced_solve(self, P) -> np.ndarray:
        """Reduced coordinates ``w~(P)``; a grid gives shape ``(N, r0)``."""
        grid, thM, thb = self._coefficients(P)
        W, bad = self._solve(thM, thb)
        if np.any(bad):
            log.warning("singular reduced matrix at %d point(s)", bad.sum())
        return W[0] if isinstance(P, ParameterPoint) else W

    def _residual_coeffs(self, thM, thb, W):
        N = len(thM)
        a = np.empty((N, self._U.shape[1]), dtype=complex)
        a[:, : thb.shape[1]] = thb
        a[:, thb.shape[1]:] = -(W[:, :, None] * thM[:, None, :]).reshape(N, -1)
        return a

    def _residual(self, thM, thb, W) -> tuple[np.ndarray, np.ndarray]:
        """``(||r||, ||b||)`` per row, with the full-order fallback under cancellation."""
        Qb = thb.shape[1]
        nb = np.linalg.norm(thb @ self._Ru[:, :Qb].T, axis=1)
        W = np.where(np.isfinite(W), W, 0.0)
        a = self._residual_coeffs(thM, thb, W)
        res = np.linalg.norm(a @ self._Ru.T, axis=1)
        low = np.flatnonzero(res < CANCELLATION_TOL * nb)
        for s in range(0, len(low), CHUNK // 8):
            idx = low[s: s + CHUNK // 8]
            res[idx] = np.linalg.norm(self._U @ a[idx].T, axis=0)
        return res, nb

    def residual_norm(self, P, W=None):
        """``||b(P) - M(P) Phi w~(P)||_2``."""
        grid, thM, thb = self._coefficients(P)
        if W is None:
            W, _ = self._solve(thM, thb)
        W = np.atleast_2d(W).reshape(len(grid), self.r0)
        res, _ = self._residual(thM, thb, W)
        return float(res[0]) if isinstance(P, ParameterPoint) else res

    def error_estimator(self, P, stability, sigma_lb=None):
        """``Delta(P) = ||r(P)|| / sigma_min^LB(P)``; rows with singular reduced systems give ``inf``."""
        grid, thM, thb = self._coefficients(P)
        if sigma_lb is None:
            sigma_lb = stability.lower_bound(grid)
        sigma_lb = np.atleast_1d(np.asarray(sigma_lb, dtype=float))
        if np.any(sigma_lb <= 0):
            i = int(np.argmax(sigma_lb <= 0))
            raise StabilityError(
                f"stability lower bound {sigma_lb[i]:.3g} at {grid[i]} is not positive; "
                "refine the stability model (smaller tolerances or more subdomains)"
            )
        W, bad = self._solve(thM, thb)
        res, _ = self._residual(thM, thb, W)
        delta = res / sigma_lb
        delta[bad] = np.inf
        return float(delta[0]) if isinstance(P, ParameterPoint) else delta

    def reconstruct(self, W: np.ndarray) -> np.ndarray:
        """Full states ``Phi w~`` as columns."""
        return self.Phi @ np.atleast_2d(W).T

    def transfer(self, P) -> np.ndarray:
        """Reduced transfer values ``c(P)^T Phi w~(P)``."""
        grid, thM, thb = self._coefficients(P)
        W, _ = self._solve(thM, thb)
        thc = self.model.c.coefficients(grid)
        H = np.einsum("nr,nr->n", thc @ self.cr, W)
        return complex(H[0]) if isinstance(P, ParameterPoint) else H


def _as_grid(P) -> ParameterGrid:
    if isinstance(P, ParameterPoint):
        return ParameterGrid([P.omega], np.array([P.p], dtype=float).reshape(1, -1))
    return P


@dataclass
class GreedyRecord:
    iteration: int  # basis size when the estimator was swept
    point: ParameterPoint | None
    max_estimator: float
    max_true_error: float = float("nan")


@dataclass
class GreedyTrace:
    records: list[GreedyRecord] = field(default_factory=list)
    status: str = "running"
    norm_scale: float = 1.0

    @property
    def max_estimators(self) -> np.ndarray:
        return np.array([r.max_estimator for r in self.records])

    @property
    def max_true_errors(self) -> np.ndarray:
        return np.array([r.max_true_error for r in self.records])

    def to_csv(self, path, d: int) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "omega", *[f"p{k}" for k in range(d)], "max_estimator", "max_true_error"])
            for r in self.records:
                pt = [np.nan] * (d + 1) if r.point is None else [r.point.omega, *r.point.p]
                w.writerow([r.iteration, *map(repr, pt), repr(r.max_estimator), repr(r.max_true_error)])

    @classmethod
    def from_csv(cls, path) -> "GreedyTrace":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        recs = []
        for row in rows[1:]:
            vals = [float(x) for x in row]
            pt = None if np.isnan(vals[1]) else ParameterPoint(vals[1], tuple(vals[2:-2]))
            recs.append(GreedyRecord(int(vals[0]), pt, vals[-2], vals[-1]))
        return cls(recs, status="loaded")


def run_greedy(
    model: ParametricLTI,
    grid: ParameterGrid,
    stability,
    max_r0: int = 20,
    tol: float = 0.0,
    truth_index=None,
    sigma_lb: np.ndarray | None = None,
    callback=None,
) -> tuple[ReducedBasis, GreedyTrace]:
    """Weak greedy: enrich at ``argmax Delta`` until ``max Delta <= tol`` or ``r0 = max_r0``.

    ``truth_index`` selects grid points whose true errors are tracked by full
    solves. ``callback(rb, delta)`` is called after every sweep.
    """
    if len(grid) == 0:
        raise ValueError("empty greedy grid")
    model.check_grid(grid)
    if sigma_lb is None:
        sigma_lb = stability.lower_bound(grid)
    W_true = None
    if truth_index is not None:
        truth_index = np.asarray(truth_index, dtype=int)
        W_true = solve_grid(model, grid.subset(truth_index))
    rb = ReducedBasis(model)
    trace = GreedyTrace(norm_scale=model.norm_scale)
    while True:
        delta = rb.error_estimator(grid, stability, sigma_lb)
        if callback is not None:
            callback(rb, delta)
        true_err = np.nan
        if W_true is not None:
            Wr = rb.reduced_solve(grid.subset(truth_index))
            true_err = float(np.max(np.linalg.norm(W_true - rb.reconstruct(Wr), axis=0)))
        i = int(np.argmax(delta))
        dmax = float(delta[i])
        done = dmax <= tol or rb.r0 >= max_r0
        trace.records.append(GreedyRecord(rb.r0, None if done else grid[i], dmax, true_err))
        if done:
            trace.status = "converged" if dmax <= tol else "max_r0"
            break
        try:
            rb.enrich(grid[i])
        except RedundantSnapshot as exc:
            log.warning("greedy stagnated at r0=%d: %s", rb.r0, exc)
            trace.records[-1].point = None
            trace.status = "stagnation"
            break
        log.info("greedy r0=%d: max estimator %.4g (scaled %.4g) at %s",
                 rb.r0, dmax, dmax * model.norm_scale, grid[i])
    return rb, trace
