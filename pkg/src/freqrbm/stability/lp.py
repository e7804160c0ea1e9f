"""Small dense linear programs by a bounded-variable dual simplex.

Problems have the form ``min c.y  s.t.  lo <= y <= hi,  a_i.y >= g_i``. They
are tiny (at most a few dozen variables and constraints) and are solved in
bulk, so the kernel is compiled with numba and refactorizes the basis at every
iteration instead of updating an inverse.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import linprog

OPTIMAL, INFEASIBLE, ITERATION_LIMIT, SINGULAR = 0, 1, 2, 3

_FEAS_TOL = 1e-9
_PIV_TOL = 1e-11
_THREADS = 1


def set_threads(n: int) -> None:
    """Worker threads for :func:`solve_lp_batch` (the kernel releases the GIL)."""
    global _THREADS
    if n < 1:
        raise ValueError(f"thread count must be positive, got {n}")
    _THREADS = int(n)


class LPInfeasibleError(RuntimeError):
    """Constraint data admits no feasible point."""


@dataclass
class LPProblem:
    objective: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    constraints: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = len(self.objective)
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("box bounds must match the objective length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("box bounds must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("empty box")
        for a, _ in self.constraints:
            if np.shape(a) != (n,):
                raise ValueError("constraint rows must match the objective length")


@njit(cache=True, nogil=True)
def _dual_simplex(c, lo, hi, A, g):
    """Return ``(status, value, y)`` for ``min c.y, lo<=y<=hi, A y >= g``."""
    nv = c.shape[0]
    width = hi - lo
    y = lo.copy()
    base = 0.0
    for j in range(nv):
        base += c[j] * lo[j]

    # rescale to t in [0, 1]^nv and normalize rows
    m0 = A.shape[0]
    keep = np.zeros(m0, dtype=np.bool_)
    Ab = np.zeros((m0, nv))
    gb = np.zeros(m0)
    m = 0
    for i in range(m0):
        rhs = g[i]
        scale = 0.0
        for j in range(nv):
            v = A[i, j] * width[j]
            rhs -= A[i, j] * lo[j]
            if abs(v) > scale:
                scale = abs(v)
        if scale == 0.0:
            if rhs > _FEAS_TOL * max(1.0, abs(g[i])):
                return INFEASIBLE, np.nan, y
            continue
        for j in range(nv):
            Ab[m, j] = A[i, j] * width[j] / scale
        gb[m] = rhs / scale
        keep[i] = True
        m += 1
    ct = c * width

    ntot = nv + m
    # nonbasic structurals start at their cost-minimizing bound: dual feasible
    at_upper = np.zeros(ntot, dtype=np.bool_)
    for j in range(nv):
        at_upper[j] = ct[j] < 0.0
    is_basic = np.zeros(ntot, dtype=np.bool_)
    basis = np.empty(m, dtype=np.int64)
    for i in range(m):
        basis[i] = nv + i
        is_basic[nv + i] = True

    t = np.zeros(nv)
    max_iter = 50 * (ntot + 1)
    bland_after = max_iter // 2
    status = ITERATION_LIMIT
    B = np.zeros((m, m))
    for it in range(max_iter):
        for j in range(nv):
            if not is_basic[j]:
                t[j] = 1.0 if at_upper[j] else 0.0
        if m == 0:
            status = OPTIMAL
            break
        # basis matrix and primal basic values
        for i in range(m):
            k = basis[i]
            for r in range(m):
                B[r, i] = Ab[r, k] if k < nv else (-1.0 if r == k - nv else 0.0)
        rhs = gb.copy()
        for j in range(nv):
            if not is_basic[j] and at_upper[j]:
                for r in range(m):
                    rhs[r] -= Ab[r, j]
        try:
            xB = np.linalg.solve(B, rhs)
        except Exception:  # collinear columns pivoted in on roundoff
            status = SINGULAR
            break

        # leaving variable: largest bound violation
        leave = -1
        worst = _FEAS_TOL
        below = True
        for i in range(m):
            k = basis[i]
            v = xB[i]
            viol_lo = -v
            viol_hi = v - 1.0 if k < nv else -np.inf
            if it >= bland_after:
                if viol_lo > _FEAS_TOL or viol_hi > _FEAS_TOL:
                    if leave < 0 or k < basis[leave]:
                        leave = i
                        below = viol_lo > _FEAS_TOL
                continue
            if viol_lo > worst:
                worst = viol_lo
                leave = i
                below = True
            if viol_hi > worst:
                worst = viol_hi
                leave = i
                below = False
        if leave < 0:
            for i in range(m):
                if basis[i] < nv:
                    t[basis[i]] = xB[i]
            status = OPTIMAL
            break

        # duals and reduced costs
        cB = np.zeros(m)
        for i in range(m):
            if basis[i] < nv:
                cB[i] = ct[basis[i]]
        BT = B.T.copy()
        pi = np.linalg.solve(BT, cB)
        er = np.zeros(m)
        er[leave] = 1.0
        rho = np.linalg.solve(BT, er)
        piv_tol = _PIV_TOL * max(1.0, np.max(np.abs(rho)))

        enter = -1
        best = np.inf
        best_piv = 0.0
        for j in range(ntot):
            if is_basic[j]:
                continue
            if j < nv:
                alpha = 0.0
                dj = ct[j]
                for r in range(m):
                    alpha += rho[r] * Ab[r, j]
                    dj -= pi[r] * Ab[r, j]
            else:
                alpha = -rho[j - nv]
                dj = pi[j - nv]
            if abs(alpha) <= piv_tol:
                continue
            up = at_upper[j]
            if below:
                ok = (not up and alpha < 0.0) or (up and alpha > 0.0)
            else:
                ok = (not up and alpha > 0.0) or (up and alpha < 0.0)
            if not ok:
                continue
            ratio = abs(dj) / abs(alpha)
            if it >= bland_after:
                if ratio < best - 1e-14:
                    best = ratio
                    enter = j
                    best_piv = abs(alpha)
            elif ratio < best - 1e-12 * (1.0 + best) or (
                ratio <= best + 1e-12 * (1.0 + best) and abs(alpha) > best_piv
            ):
                best = ratio
                enter = j
                best_piv = abs(alpha)
        if enter < 0:
            status = INFEASIBLE
            break

        k = basis[leave]
        is_basic[k] = False
        at_upper[k] = not below
        basis[leave] = enter
        is_basic[enter] = True
        at_upper[enter] = False

    val = base
    for j in range(nv):
        y[j] = lo[j] + width[j] * t[j]
        val += ct[j] * t[j]
    return status, val, y


@njit(cache=True, nogil=True)
def _solve_batch(C, lo, hi, A, g, nbr, values, argmins, status):
    for i in range(C.shape[0]):
        k = 0
        while k < nbr.shape[1] and nbr[i, k] >= 0:
            k += 1
        idx = nbr[i, :k]
        st, val, y = _dual_simplex(C[i], lo, hi, A[idx], g[idx])
        values[i] = val
        argmins[i] = y
        status[i] = st


def _highs(c, lo, hi, A, g):
    """Fallback for programs whose simplex basis went singular."""
    res = linprog(c, A_ub=-A if len(g) else None, b_ub=-g if len(g) else None,
                  bounds=list(zip(lo, hi)), method="highs")
    if res.status == 2:
        return INFEASIBLE, np.nan, lo.copy()
    if res.status != 0:
        return ITERATION_LIMIT, np.nan, lo.copy()
    return OPTIMAL, float(res.fun), np.clip(res.x, lo, hi)


def _resolve_singular(C, lo, hi, A, g, nbr, values, argmins, status) -> None:
    for i in np.flatnonzero(status == SINGULAR):
        idx = nbr[i][nbr[i] >= 0]
        status[i], values[i], argmins[i] = _highs(C[i], lo, hi, A[idx], g[idx])


def solve_lp_batch(C, lower, upper, A, g, neighbors):
    """Solve ``N`` programs sharing a box and a pool of constraints.

    Program ``i`` minimizes ``C[i].y`` subject to the box and to the rows
    ``A[k].y >= g[k]`` for ``k`` in ``neighbors[i]`` (``-1`` entries pad).

    Returns ``(values, argmins, status)``.
    """
    C = np.ascontiguousarray(C, dtype=float)
    N, nv = C.shape
    A = np.ascontiguousarray(A, dtype=float).reshape(-1, nv)
    g = np.ascontiguousarray(g, dtype=float).ravel()
    nbr = np.ascontiguousarray(neighbors, dtype=np.int64).reshape(N, -1)
    values = np.empty(N)
    argmins = np.empty((N, nv))
    status = np.empty(N, dtype=np.int64)
    lo = np.ascontiguousarray(lower, dtype=float)
    hi = np.ascontiguousarray(upper, dtype=float)
    nt = min(_THREADS, max(1, N // 64))
    if nt == 1:
        _solve_batch(C, lo, hi, A, g, nbr, values, argmins, status)
        _resolve_singular(C, lo, hi, A, g, nbr, values, argmins, status)
        return values, argmins, status
    cuts = np.linspace(0, N, nt + 1).astype(int)

    def run(k):
        s = slice(cuts[k], cuts[k + 1])
        _solve_batch(C[s], lo, hi, A, g, nbr[s], values[s], argmins[s], status[s])

    with ThreadPoolExecutor(nt) as pool:
        list(pool.map(run, range(nt)))
    _resolve_singular(C, lo, hi, A, g, nbr, values, argmins, status)
    return values, argmins, status


def solve_lp(lp: LPProblem) -> tuple[float, np.ndarray]:
    """Global minimum and a minimizer of ``lp``."""
    nv = len(lp.objective)
    if lp.constraints:
        A = np.array([a for a, _ in lp.constraints], dtype=float).reshape(-1, nv)
        g = np.array([b for _, b in lp.constraints], dtype=float)
    else:
        A, g = np.zeros((0, nv)), np.zeros(0)
    st, val, y = _dual_simplex(lp.objective, lp.lower, lp.upper, A, g)
    if st == SINGULAR:
        st, val, y = _highs(lp.objective, lp.lower, lp.upper, A, g)
    if st == INFEASIBLE:
        raise LPInfeasibleError("infeasible linear program: inconsistent constraint data")
    if st != OPTIMAL:
        raise RuntimeError("simplex iteration limit reached")
    return float(val), y
