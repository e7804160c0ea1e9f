"""Extreme eigen- and singular values for the stability bounds.

Matrices up to ``DENSE_MAX`` rows are handled densely; larger ones go through
ARPACK (shift-invert where the smallest value is wanted). Block-diagonal
matrices can be split into independent blocks, which makes the Penzl model
cheap.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

DENSE_MAX = 400  # above this sparse LU + ARPACK wins (about 50x at n = 1024)
ORACLE_MAX_N = 2000
# capped pencil Lanczos can stall on clustered spectra (fractional model); up to this size retry densely
PENCIL_DENSE_MAX = 2000
PENCIL_MAXITER = 300
EIG_TOL = 1e-8
_SMALL_BLOCK = 64


class EigenSolverError(RuntimeError):
    pass


def _start_vector(n: int, dtype=complex) -> np.ndarray:
    # fixed ARPACK start so results do not depend on a global random state
    return np.random.default_rng(12345).standard_normal(n).astype(dtype)


def block_partition(pattern) -> list[np.ndarray]:
    """Index sets of the diagonal blocks of a (symmetrized) sparsity pattern."""
    S = sp.csr_matrix(pattern, dtype=bool)
    S = S + S.T
    ncomp, labels = connected_components(S, directed=False)
    order = np.argsort(labels, kind="stable")
    splits = np.cumsum(np.bincount(labels, minlength=ncomp))[:-1]
    return np.split(order, splits)


def _group_blocks(blocks):
    groups = defaultdict(list)
    for b in blocks:
        groups[len(b)].append(b)
    return {s: np.array(bs) for s, bs in sorted(groups.items())}


def _as_dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def hermitian_part_extremes(X, dense_max: int = DENSE_MAX, tol: float = EIG_TOL) -> tuple[float, float]:
    """``(lambda_min, lambda_max)`` of ``(X + X^*)/2``."""
    n, m = X.shape
    if n != m:
        raise ValueError(f"square matrix required, got {X.shape}")
    if n <= dense_max:
        Xd = _as_dense(X)
        lam = sla.eigvalsh((Xd + Xd.conj().T) / 2)
        return float(lam[0]), float(lam[-1])
    Xs = sp.csr_matrix(X)
    H = ((Xs + Xs.conj().T) / 2).tocsr()
    H.eliminate_zeros()
    if H.nnz == 0:
        return 0.0, 0.0
    # Gershgorin shifts put every eigenvalue on one side, so shift-invert
    # finds the extreme one in a few iterations
    d = H.diagonal().real
    rad = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(d)
    lo, hi = float(np.min(d - rad)), float(np.max(d + rad))
    pad = 1e-3 * max(hi - lo, np.abs(d).max(), 1e-300)
    out = []
    for shift in (lo - pad, hi + pad):
        try:
            lam = spla.eigsh(H, k=1, sigma=shift, which="LM", tol=tol, maxiter=20 * n,
                             v0=_start_vector(n, H.dtype), return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"Lanczos did not converge near {shift}: {exc}") from exc
        out.append(float(lam[0].real))
    return out[0], out[1]


def _sigma_dense(Md: np.ndarray) -> tuple[float, np.ndarray]:
    n = Md.shape[0]
    if n <= _SMALL_BLOCK:
        _, s, Vh = np.linalg.svd(Md)
        return float(s[-1]), Vh[-1].conj()
    G = Md.conj().T @ Md
    _, V = sla.eigh(G, subset_by_index=[0, 0])
    v = V[:, 0]
    try:
        # one step of inverse iteration on M^*M sharpens the vector
        lu = sla.lu_factor(Md, check_finite=False)
        v = sla.lu_solve(lu, sla.lu_solve(lu, v, trans=2))
        v /= np.linalg.norm(v)
    except (np.linalg.LinAlgError, ValueError):
        pass
    return float(np.linalg.norm(Md @ v)), v


def smallest_sigma(
    M, dense_max: int = DENSE_MAX, tol: float = EIG_TOL, blocks=None, method: str | None = None
) -> tuple[float, np.ndarray]:
    """Smallest singular value and a unit right singular vector.

    ``method`` forces ``"dense"`` or ``"iterative"``; by default matrices up to
    ``dense_max`` rows are dense. ``blocks`` (from :func:`block_partition`)
    splits a block-diagonal matrix.
    """
    n, m = M.shape
    if n != m:
        raise ValueError(f"square matrix required, got {M.shape}")
    method = method or ("dense" if n <= dense_max or blocks is not None and len(blocks) > 1 else "iterative")
    if method == "iterative":
        return _sigma_iterative(sp.csc_matrix(M), tol)
    if blocks is None or len(blocks) == 1:
        return _sigma_dense(_as_dense(M))
    Md = _as_dense(M)
    best, vbest = np.inf, None
    for size, idx in _group_blocks(blocks).items():
        sub = Md[idx[:, :, None], idx[:, None, :]]
        if size <= _SMALL_BLOCK:
            _, s, Vh = np.linalg.svd(sub)
            k = int(np.argmin(s[:, -1]))
            sig, vb = s[k, -1], Vh[k, -1].conj()
        else:
            res = [_sigma_dense(b) for b in sub]
            k = int(np.argmin([r[0] for r in res]))
            sig, vb = res[k]
        if sig < best:
            best = float(sig)
            vbest = np.zeros(n, dtype=complex)
            vbest[idx[k]] = vb
    return best, vbest


def _sigma_iterative(M: sp.csc_matrix, tol: float) -> tuple[float, np.ndarray]:
    n = M.shape[0]
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise EigenSolverError(f"factorization failed: {exc}") from exc
    op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(lu.solve(x, trans="H")), dtype=complex)
    try:
        _, V = spla.eigsh(op, k=1, which="LM", tol=tol, maxiter=20 * n, v0=_start_vector(n))
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"inverse Lanczos did not converge: {exc}") from exc
    v = V[:, 0] / np.linalg.norm(V[:, 0])
    return float(np.linalg.norm(M @ v)), v


def largest_sigma(M, dense_max: int = DENSE_MAX, tol: float = 1e-6) -> float:
    n = M.shape[0]
    if n <= dense_max:
        return float(np.linalg.norm(_as_dense(M), 2))
    Ms = sp.csr_matrix(M)
    G = spla.LinearOperator((n, n), matvec=lambda x: Ms.conj().T @ (Ms @ x), dtype=complex)
    lam = spla.eigsh(G, k=1, which="LA", tol=tol, maxiter=20 * n, v0=_start_vector(n),
                     return_eigenvectors=False)
    return float(np.sqrt(lam[0]))


def _beta_dense(Md: np.ndarray, Mbd: np.ndarray) -> tuple[float, np.ndarray]:
    # with u = Mbar v the pencil becomes the Hermitian part of M Mbar^{-1}
    X = np.linalg.solve(Mbd.T, Md.T).T
    K = (X + X.conj().T) / 2
    if Md.shape[0] <= _SMALL_BLOCK:
        lam, U = np.linalg.eigh(K)
    else:
        lam, U = sla.eigh(K, subset_by_index=[0, 0])
    v = np.linalg.solve(Mbd, U[:, 0])
    return float(lam[0]), v / np.linalg.norm(v)


def beta_pencil(
    M,
    Mbar,
    dense_max: int = DENSE_MAX,
    tol: float = EIG_TOL,
    blocks=None,
    fallback_max: int = PENCIL_DENSE_MAX,
) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue of the pencil ``((Mbar^* M)^H, Mbar^* Mbar)`` and its unit vector.

    Above ``dense_max`` a capped Lanczos run is tried first. If it stalls and
    ``n <= fallback_max`` the dense solver takes over.
    """
    n = M.shape[0]
    if M.shape != Mbar.shape or M.shape[1] != n:
        raise ValueError("beta pencil needs square matrices of equal shape")
    multi = blocks is not None and len(blocks) > 1
    if n > dense_max and not multi:
        capped = n <= fallback_max
        try:
            return _beta_iterative(sp.csc_matrix(M), sp.csc_matrix(Mbar), tol,
                                   PENCIL_MAXITER if capped else 50 * n)
        except EigenSolverError:
            if not capped:
                raise
    Md, Mbd = _as_dense(M), _as_dense(Mbar)
    if not multi:
        try:
            return _beta_dense(Md, Mbd)
        except np.linalg.LinAlgError as exc:
            raise EigenSolverError(f"degenerate pencil: {exc}") from exc
    best, vbest = np.inf, None
    for size, idx in _group_blocks(blocks).items():
        ii, jj = idx[:, :, None], idx[:, None, :]
        sub, subb = Md[ii, jj], Mbd[ii, jj]
        try:
            if size <= _SMALL_BLOCK:
                X = np.swapaxes(np.linalg.solve(np.swapaxes(subb, 1, 2), np.swapaxes(sub, 1, 2)), 1, 2)
                K = (X + np.conj(np.swapaxes(X, 1, 2))) / 2
                lam, U = np.linalg.eigh(K)
                k = int(np.argmin(lam[:, 0]))
                val = lam[k, 0]
                vb = np.linalg.solve(subb[k], U[k][:, 0])
                vb /= np.linalg.norm(vb)
            else:
                res = [_beta_dense(a, b) for a, b in zip(sub, subb)]
                k = int(np.argmin([r[0] for r in res]))
                val, vb = res[k]
        except np.linalg.LinAlgError as exc:
            raise EigenSolverError(f"degenerate pencil: {exc}") from exc
        if val < best:
            best = float(val)
            vbest = np.zeros(n, dtype=complex)
            vbest[idx[k]] = vb
    return best, vbest


def _beta_iterative(M, Mbar, tol, maxiter) -> tuple[float, np.ndarray]:
    n = M.shape[0]
    lu = spla.splu(Mbar)
    MH = M.conj().T.tocsc()

    def matvec(u):
        # (M Mbar^{-1} + Mbar^{-*} M^*) u / 2
        return (M @ lu.solve(u) + lu.solve(MH @ u, trans="H")) / 2

    K = spla.LinearOperator((n, n), matvec=matvec, dtype=complex)
    try:
        lam, U = spla.eigsh(K, k=1, which="SA", tol=tol, maxiter=maxiter, v0=_start_vector(n))
    except spla.ArpackNoConvergence as exc:
        raise EigenSolverError(f"pencil Lanczos did not converge: {exc}") from exc
    v = lu.solve(U[:, 0])
    return float(lam[0]), v / np.linalg.norm(v)


def dense_sigma_oracle(M, max_n: int = ORACLE_MAX_N) -> float:
    """Smallest singular value by a full dense SVD."""
    if M.shape[0] > max_n or M.shape[1] > max_n:
        raise ValueError(f"dense oracle limited to {max_n} rows, got {M.shape}")
    return float(sla.svdvals(_as_dense(M))[-1])
