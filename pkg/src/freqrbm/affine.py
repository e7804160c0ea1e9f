"""Affine parameter-dependent operators and parameter grids.

A parametric matrix is stored as ``sum_j theta_j(P) * M_j`` with real
coefficient functions ``theta_j`` and constant complex sparse terms ``M_j``.
Parameters are ``P = (omega, p)``; the complex frequency ``s = i*omega`` is
implicit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class EvaluationError(ValueError):
    """A coefficient function produced a non-finite value."""


@dataclass(frozen=True)
class ParameterPoint:
    """A frequency ``omega`` together with the model parameters ``p``."""

    omega: float
    p: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "p", tuple(float(v) for v in self.p))
        if not np.isfinite(self.omega):
            raise ValueError(f"omega must be finite, got {self.omega}")

    @property
    def d(self) -> int:
        return len(self.p)

    def as_array(self) -> np.ndarray:
        return np.array((self.omega,) + self.p)


@dataclass(frozen=True)
class CoefficientFn:
    """Real coefficient function, vectorized over parameter points.

    ``func(omega, p)`` receives ``omega`` of shape ``(N,)`` and ``p`` of
    shape ``(N, d)`` and returns ``N`` real values.
    """

    identifier: str
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False, repr=False)

    def __call__(self, omega, p) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        p = np.asarray(p, dtype=float).reshape(len(omega), -1)
        val = np.asarray(self.func(omega, p))
        if np.iscomplexobj(val):
            raise EvaluationError(f"coefficient {self.identifier!r} returned complex values")
        return np.broadcast_to(val.astype(float), omega.shape).copy()


def constant(value: float = 1.0, identifier: str | None = None) -> CoefficientFn:
    value = float(value)
    return CoefficientFn(identifier or f"const({value!r})", lambda w, p: np.full(w.shape, value))


def frequency() -> CoefficientFn:
    return CoefficientFn("omega", lambda w, p: w.copy())


def parameter(k: int, scale: float = 1.0, shift: float = 0.0) -> CoefficientFn:
    """``shift + scale * p[k]``."""
    ident = f"{shift!r}+{scale!r}*p{k}"
    return CoefficientFn(ident, lambda w, p: shift + scale * p[:, k])


def _coefficient_matrix(thetas: Sequence[CoefficientFn], omega, p) -> np.ndarray:
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    p = np.asarray(p, dtype=float).reshape(len(omega), -1)
    out = np.empty((len(omega), len(thetas)))
    for j, th in enumerate(thetas):
        out[:, j] = th(omega, p)
        if not np.all(np.isfinite(out[:, j])):
            raise EvaluationError(f"non-finite value from coefficient term {j} ({th.identifier})")
    return out


def _point_arrays(P) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(P, ParameterPoint):
        return np.array([P.omega]), np.array([P.p], dtype=float).reshape(1, -1)
    if isinstance(P, ParameterGrid):
        return P.omega, P.p
    raise TypeError(f"expected ParameterPoint or ParameterGrid, got {type(P).__name__}")


class AffineMatrix:
    """``M(P) = sum_j theta_j(P) M_j`` with a precomputed union sparsity pattern."""

    def __init__(self, terms: Iterable[tuple[CoefficientFn, object]]):
        terms = list(terms)
        if not terms:
            raise ValueError("an affine matrix needs at least one term")
        self.thetas = [t for t, _ in terms]
        self.matrices = [sp.csc_matrix(m, dtype=complex) for _, m in terms]
        shapes = {m.shape for m in self.matrices}
        if len(shapes) != 1:
            raise ValueError(f"all terms must share a shape, got {sorted(shapes)}")
        self.shape = self.matrices[0].shape
        self._build_pattern()

    @property
    def Q(self) -> int:
        return len(self.matrices)

    @property
    def n_rows(self) -> int:
        return self.shape[0]

    @property
    def n_cols(self) -> int:
        return self.shape[1]

    def _build_pattern(self):
        nr, nc = self.shape
        coos = [m.tocoo() for m in self.matrices]
        rows = np.concatenate([c.row for c in coos])
        cols = np.concatenate([c.col for c in coos])
        keys = np.unique(cols.astype(np.int64) * nr + rows)
        self._indices = (keys % nr).astype(np.int32)
        self._indptr = np.searchsorted(keys // nr, np.arange(nc + 1)).astype(np.int32)
        data = np.zeros((self.Q, len(keys)), dtype=complex)
        for j, c in enumerate(coos):
            pos = np.searchsorted(keys, c.col.astype(np.int64) * nr + c.row)
            np.add.at(data[j], pos, c.data)
        self._data = data

    def coefficients(self, P) -> np.ndarray:
        """Coefficient values ``theta_j(P)``; shape ``(Q,)`` for a point, ``(N, Q)`` for a grid."""
        omega, p = _point_arrays(P)
        th = _coefficient_matrix(self.thetas, omega, p)
        return th[0] if isinstance(P, ParameterPoint) else th

    def assemble(self, theta: np.ndarray) -> sp.csc_matrix:
        """Sum the terms with given coefficient values."""
        theta = np.asarray(theta, dtype=float)
        return sp.csc_matrix((theta @ self._data, self._indices, self._indptr), shape=self.shape)

    def evaluate(self, P: ParameterPoint) -> sp.csc_matrix:
        return self.assemble(self.coefficients(P))

    def pattern(self) -> sp.csc_matrix:
        """Boolean union sparsity pattern of all terms."""
        ones = np.ones(self._indices.shape, dtype=bool)
        return sp.csc_matrix((ones, self._indices, self._indptr), shape=self.shape)

    def project(self, left: np.ndarray, right: np.ndarray, conjugate: bool = True) -> list[np.ndarray]:
        """Reduced terms ``left^* M_j right`` (``left^T`` when ``conjugate`` is false)."""
        L = left.conj() if conjugate else left
        return [L.T @ (m @ right) for m in self.matrices]


class AffineVector:
    """``b(P) = sum_j theta_j(P) b_j``."""

    def __init__(self, terms: Iterable[tuple[CoefficientFn, object]]):
        terms = list(terms)
        if not terms:
            raise ValueError("an affine vector needs at least one term")
        self.thetas = [t for t, _ in terms]
        self.vectors = [np.asarray(v, dtype=complex).ravel() for _, v in terms]
        lengths = {len(v) for v in self.vectors}
        if len(lengths) != 1:
            raise ValueError(f"all terms must share a length, got {sorted(lengths)}")
        self.n = len(self.vectors[0])
        self._stack = np.array(self.vectors)

    @property
    def Q(self) -> int:
        return len(self.vectors)

    def coefficients(self, P) -> np.ndarray:
        omega, p = _point_arrays(P)
        th = _coefficient_matrix(self.thetas, omega, p)
        return th[0] if isinstance(P, ParameterPoint) else th

    def assemble(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float) @ self._stack

    def evaluate(self, P: ParameterPoint) -> np.ndarray:
        return self.assemble(self.coefficients(P))

    def as_matrix(self) -> np.ndarray:
        """Terms as columns, shape ``(n, Q)``."""
        return self._stack.T


def evaluate_matrix(A: AffineMatrix, P: ParameterPoint) -> sp.csc_matrix:
    return A.evaluate(P)


def evaluate_vector(b: AffineVector, P: ParameterPoint) -> np.ndarray:
    return b.evaluate(P)


def _negated(theta: CoefficientFn) -> CoefficientFn:
    return CoefficientFn(f"-({theta.identifier})", lambda w, p: -theta.func(w, p))


def frequency_domain_operator(A: AffineMatrix) -> AffineMatrix:
    """``M(P) = omega * (iI) - sum_j theta_j^A(p) A_j``."""
    if A.n_rows != A.n_cols:
        raise ValueError(f"frequency-domain operator needs a square matrix, got {A.shape}")
    n = A.n_rows
    terms = [(frequency(), 1j * sp.identity(n, dtype=complex, format="csc"))]
    terms += [(_negated(th), m) for th, m in zip(A.thetas, A.matrices)]
    return AffineMatrix(terms)


class ParameterGrid:
    """Finite set of unique parameter points, optionally split into frequency subdomains.

    Subdomain ``j`` (1-based) holds ``edges[j-1] <= omega < edges[j]``; the last
    subdomain is closed on the right so that ``omega = edges[-1]`` is covered.
    """

    def __init__(self, omega, p=None, frequency_edges=None):
        omega = np.asarray(omega, dtype=float).ravel()
        if p is None:
            p = np.zeros((len(omega), 0))
        p = np.asarray(p, dtype=float).reshape(len(omega), -1)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(p))):
            raise ValueError("grid coordinates must be finite")
        coords = np.column_stack([omega, p])
        _, first = np.unique(coords, axis=0, return_index=True)
        keep = np.sort(first)
        self.omega = omega[keep]
        self.p = p[keep]
        self.frequency_edges = None
        if frequency_edges is not None:
            edges = np.asarray(frequency_edges, dtype=float)
            if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
                raise ValueError("frequency edges must be strictly increasing with at least 2 entries")
            if np.any(self.omega < edges[0]) or np.any(self.omega > edges[-1]):
                raise ValueError("grid frequencies fall outside the frequency edges")
            self.frequency_edges = edges
        for arr in (self.omega, self.p):
            arr.setflags(write=False)

    @classmethod
    def from_points(cls, points: Sequence[ParameterPoint], frequency_edges=None) -> "ParameterGrid":
        points = list(points)
        if not points:
            raise ValueError("empty point list")
        omega = [P.omega for P in points]
        p = [P.p for P in points]
        return cls(omega, np.array(p, dtype=float).reshape(len(points), -1), frequency_edges)

    def __len__(self) -> int:
        return len(self.omega)

    def __getitem__(self, i: int) -> ParameterPoint:
        return ParameterPoint(self.omega[i], tuple(self.p[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def d(self) -> int:
        return self.p.shape[1]

    @property
    def points(self) -> list[ParameterPoint]:
        return list(self)

    def coords(self) -> np.ndarray:
        """Raw ``(omega, p)`` coordinates, shape ``(N, d+1)``."""
        return np.column_stack([self.omega, self.p])

    def subset(self, index) -> "ParameterGrid":
        index = np.asarray(index)
        return ParameterGrid(self.omega[index], self.p[index], self.frequency_edges)

    def with_edges(self, frequency_edges) -> "ParameterGrid":
        return ParameterGrid(self.omega, self.p, frequency_edges)

    def subdomain_index(self) -> np.ndarray:
        """1-based subdomain of each point."""
        if self.frequency_edges is None:
            return np.ones(len(self), dtype=int)
        return subdomain_of(self.omega, self.frequency_edges)

    def subdomain(self, j: int, closed: bool = True) -> np.ndarray:
        """Indices of points with ``edges[j-1] <= omega <= edges[j]`` (or by partition when not ``closed``)."""
        if self.frequency_edges is None:
            return np.arange(len(self))
        if not closed:
            return np.flatnonzero(self.subdomain_index() == j)
        lo, hi = self.frequency_edges[j - 1], self.frequency_edges[j]
        return np.flatnonzero((self.omega >= lo) & (self.omega <= hi))


def subdomain_of(omega, edges) -> np.ndarray:
    """1-based frequency subdomain for each ``omega``; raises outside ``[edges[0], edges[-1]]``."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    edges = np.asarray(edges, dtype=float)
    if np.any(omega < edges[0]) or np.any(omega > edges[-1]):
        bad = omega[(omega < edges[0]) | (omega > edges[-1])][0]
        raise ValueError(f"omega={bad} lies outside all frequency subdomains [{edges[0]}, {edges[-1]}]")
    idx = np.searchsorted(edges, omega, side="right")
    return np.minimum(idx, len(edges) - 1)


def log_frequency_partition(omega_lo: float, omega_hi: float, M: int) -> np.ndarray:
    """Edges ``{0, omega_lo, ..., omega_hi}``: ``M - 1`` log-spaced gaps above ``omega_lo``."""
    if not (0 < omega_lo < omega_hi):
        raise ValueError(f"need 0 < omega_lo < omega_hi, got {omega_lo}, {omega_hi}")
    if M < 2:
        raise ValueError(f"need M >= 2, got {M}")
    inner = np.logspace(np.log10(omega_lo), np.log10(omega_hi), M)
    inner[0], inner[-1] = omega_lo, omega_hi
    return np.concatenate([[0.0], inner])


def subdomain_frequencies(edges, per_subdomain: int = 5) -> np.ndarray:
    """Uniformly spaced frequencies inside each closed subdomain (shared edges kept once)."""
    edges = np.asarray(edges, dtype=float)
    vals = [np.linspace(lo, hi, per_subdomain) for lo, hi in zip(edges[:-1], edges[1:])]
    return np.unique(np.concatenate(vals))


def tensor_grid(freq_values, param_axes=(), frequency_edges=None) -> ParameterGrid:
    """Cartesian product of a frequency axis and parameter axes (frequency varies slowest)."""
    axes = [np.atleast_1d(np.asarray(freq_values, dtype=float))]
    axes += [np.atleast_1d(np.asarray(a, dtype=float)) for a in param_axes]
    if any(len(a) == 0 for a in axes):
        raise ValueError("tensor grid axes must be non-empty")
    coords = np.array(list(itertools.product(*axes)), dtype=float)
    return ParameterGrid(coords[:, 0], coords[:, 1:], frequency_edges)
