"""Parametric full-order LTI models and the benchmark systems.

Each model is SISO: ``x' = A(p) x + b(p) u``, ``y = c(p)^T x``. In the
frequency domain the state solves ``M(P) w = b(p)`` with
``M(P) = i*omega*I - A(p)`` and the output transfer value is ``H = c^T w``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .affine import (
    AffineMatrix,
    AffineVector,
    CoefficientFn,
    ParameterGrid,
    ParameterPoint,
    constant,
    frequency_domain_operator,
    parameter,
)


class SolveError(RuntimeError):
    """Full-order frequency solve failed at a parameter point."""

    def __init__(self, message: str, point: ParameterPoint | None = None, index: int | None = None):
        super().__init__(message)
        self.point = point
        self.index = index


@dataclass
class ParametricLTI:
    """SISO parametric LTI system with affine ``A(p)``, ``b(p)``, ``c(p)``.

    ``M`` defaults to the frequency-domain operator of ``A``; models whose
    frequency dependence is not ``i*omega`` (the fractional model) pass it
    explicitly and set ``time_domain=False``.
    """

    name: str
    A: AffineMatrix
    b: AffineVector
    c: AffineVector
    param_box: list[tuple[float, float]]
    norm_scale: float = 1.0  # state-norm factor giving discrete L2 norms
    M: AffineMatrix | None = None
    time_domain: bool = True
    shift: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.M is None:
            self.M = frequency_domain_operator(self.A)
        n = self.A.n_rows
        if self.A.shape != (n, n) or self.M.shape != (n, n) or self.b.n != n or self.c.n != n:
            raise ValueError(f"inconsistent dimensions in model {self.name!r}")
        if self.shift is None and self.time_domain:
            self.shift = lambda w, p: 1j * w

    @property
    def n(self) -> int:
        return self.A.n_rows

    @property
    def d(self) -> int:
        return len(self.param_box)

    def check_point(self, P: ParameterPoint):
        if P.d != self.d:
            raise ValueError(f"model {self.name!r} has {self.d} parameters, point has {P.d}")
        for k, (v, (lo, hi)) in enumerate(zip(P.p, self.param_box)):
            if not lo <= v <= hi:
                raise ValueError(f"parameter p{k}={v} outside [{lo}, {hi}]")

    def check_grid(self, grid: ParameterGrid):
        if grid.d != self.d:
            raise ValueError(f"model {self.name!r} has {self.d} parameters, grid has {grid.d}")
        for k, (lo, hi) in enumerate(self.param_box):
            if np.any(grid.p[:, k] < lo) or np.any(grid.p[:, k] > hi):
                raise ValueError(f"grid parameter p{k} leaves [{lo}, {hi}]")

    def is_real(self) -> bool:
        """All time-domain terms are real."""
        mats = [m.data for m in self.A.matrices]
        vecs = self.b.vectors + self.c.vectors
        return all(np.all(x.imag == 0) for x in mats + vecs)

    def output_norm(self, p) -> float:
        """``||c(p)||_2``."""
        return float(np.linalg.norm(self.c.evaluate(ParameterPoint(0.0, tuple(p)))))


@dataclass
class FrequencySolution:
    P: ParameterPoint
    w: np.ndarray
    H: complex


def solve_frequency(model: ParametricLTI, P: ParameterPoint, check: bool = True) -> FrequencySolution:
    """Sparse direct solve of ``M(P) w = b(P)``."""
    if check:
        model.check_point(P)
    M = model.M.evaluate(P)
    b = model.b.evaluate(P)
    try:
        w = spla.splu(M).solve(b)
    except RuntimeError as exc:
        raise SolveError(f"factorization failed at {P}: {exc}", point=P) from exc
    res = np.linalg.norm(M @ w - b)
    nb = np.linalg.norm(b)
    if not np.all(np.isfinite(w)) or res > 1e-10 * max(nb, np.finfo(float).tiny):
        raise SolveError(f"near-singular system at {P}: relative residual {res / nb:.2e}", point=P)
    H = complex(model.c.evaluate(P) @ w)
    return FrequencySolution(P, w, H)


def solve_grid(model: ParametricLTI, grid: ParameterGrid) -> np.ndarray:
    """States ``w(P)`` for every grid point as columns, shape ``(n, N)``."""
    model.check_grid(grid)
    W = np.empty((model.n, len(grid)), dtype=complex)
    for i, P in enumerate(grid):
        try:
            W[:, i] = solve_frequency(model, P, check=False).w
        except SolveError as exc:
            exc.index = i
            raise SolveError(f"grid index {i}: {exc}", point=P, index=i) from exc
    return W


def transfer_function(model: ParametricLTI, grid: ParameterGrid) -> np.ndarray:
    """Output transfer values ``H(i*omega; p)`` in grid order."""
    model.check_grid(grid)
    H = np.empty(len(grid), dtype=complex)
    for i, P in enumerate(grid):
        try:
            H[i] = solve_frequency(model, P, check=False).H
        except SolveError as exc:
            raise SolveError(f"grid index {i}: {exc}", point=P, index=i) from exc
    return H


# ---------------------------------------------------------------------------
# benchmark models


def _second_difference(m: int, h: float) -> sp.csr_matrix:
    return sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="csr") / h**2


def _square_grid(grid_n: int):
    """Interior nodes of a uniform grid on (-1, 1)^2, x varying fastest."""
    if grid_n < 3:
        raise ValueError(f"grid_n must be >= 3, got {grid_n}")
    h = 2.0 / (grid_n + 1)
    nodes = -1.0 + h * np.arange(1, grid_n + 1)
    X, Y = np.meshgrid(nodes, nodes)
    T = _second_difference(grid_n, h)
    I = sp.identity(grid_n, format="csr")
    Dxx = sp.kron(I, T, format="csc")
    Dyy = sp.kron(T, I, format="csc")
    return X.ravel(), Y.ravel(), Dxx, Dyy


def _io_vectors(x, y):
    n = len(x)
    b = (x**2 + y**2 > 0.25).astype(float)
    c = np.full(n, 1.0 / n)
    return AffineVector([(constant(1.0), b)]), AffineVector([(constant(1.0), c)])


def make_heat_symmetric(grid_n: int = 32) -> ParametricLTI:
    """``u_t = u_xx + p1 u_yy + p2 u + f`` on (-1,1)^2, p1 in [0.1, 4], p2 in [0, 2]."""
    x, y, Dxx, Dyy = _square_grid(grid_n)
    n = len(x)
    A = AffineMatrix(
        [
            (constant(1.0), Dxx),
            (parameter(0), Dyy),
            (parameter(1), sp.identity(n, format="csc")),
        ]
    )
    b, c = _io_vectors(x, y)
    return ParametricLTI(
        "heat_symmetric", A, b, c, [(0.1, 4.0), (0.0, 2.0)],
        norm_scale=4.0 / np.sqrt(n), options={"grid_n": grid_n},
    )


def make_vanishing_diffusion(grid_n: int = 32) -> ParametricLTI:
    """``u_t = (1 + p1 x) u_xx + (1 + p2 y) u_yy + f``, p1, p2 in [-0.99, 0.99]."""
    x, y, Dxx, Dyy = _square_grid(grid_n)
    n = len(x)
    A = AffineMatrix(
        [
            (constant(1.0), Dxx),
            (parameter(0), sp.diags(x) @ Dxx),
            (constant(1.0), Dyy),
            (parameter(1), sp.diags(y) @ Dyy),
        ]
    )
    b, c = _io_vectors(x, y)
    return ParametricLTI(
        "vanishing_diffusion", A, b, c, [(-0.99, 0.99), (-0.99, 0.99)],
        norm_scale=4.0 / np.sqrt(n), options={"grid_n": grid_n},
    )


def fractional_coefficients() -> tuple[CoefficientFn, CoefficientFn]:
    """Real and imaginary parts of ``(i*omega)^alpha`` with ``alpha = p[0]``."""
    re = CoefficientFn(
        "|omega|^alpha*cos(alpha*pi/2)",
        lambda w, p: np.abs(w) ** p[:, 0] * np.cos(p[:, 0] * np.pi / 2),
    )
    im = CoefficientFn(
        "|omega|^alpha*sign(omega)*sin(alpha*pi/2)",
        lambda w, p: np.abs(w) ** p[:, 0] * np.sign(w) * np.sin(p[:, 0] * np.pi / 2),
    )
    return re, im


def make_fractional_heat(grid_n: int = 32) -> ParametricLTI:
    """Time-fractional heat equation; ``M(P) = (i*omega)^alpha I - A``, alpha in [0.05, 1]."""
    x, y, Dxx, Dyy = _square_grid(grid_n)
    n = len(x)
    lap = (Dxx + Dyy).tocsc()
    A = AffineMatrix([(constant(1.0), lap)])
    I = sp.identity(n, dtype=complex, format="csc")
    re, im = fractional_coefficients()
    M = AffineMatrix([(re, I), (im, 1j * I), (constant(1.0), -lap)])
    b, c = _io_vectors(x, y)

    def shift(w, p):
        return np.abs(w) ** p[:, 0] * np.exp(1j * np.sign(w) * p[:, 0] * np.pi / 2)

    return ParametricLTI(
        "fractional_heat", A, b, c, [(0.05, 1.0)],
        norm_scale=4.0 / np.sqrt(n), M=M, time_domain=False, shift=shift,
        options={"grid_n": grid_n},
    )


def make_penzl() -> ParametricLTI:
    """Three-parameter Penzl model, n = 1006, p1, p2, p3 in [-20, 20]."""
    n = 1006
    A0 = sp.lil_matrix((n, n))
    for k, f in enumerate((100.0, 200.0, 400.0)):
        i = 2 * k
        A0[i, i] = A0[i + 1, i + 1] = -1.0
        A0[i, i + 1] = f
        A0[i + 1, i] = -f
    A0 = A0.tocsc() + sp.diags(np.concatenate([np.zeros(6), -np.arange(1.0, 1001.0)]), format="csc")
    terms = [(constant(1.0), A0)]
    for k in range(3):
        E = sp.lil_matrix((n, n))
        E[2 * k, 2 * k + 1] = 1.0
        E[2 * k + 1, 2 * k] = -1.0
        terms.append((parameter(k), E.tocsc()))
    bvec = np.ones(n)
    bvec[:6] = 10.0
    b = AffineVector([(constant(1.0), bvec)])
    c = AffineVector([(constant(1.0), bvec.copy())])
    return ParametricLTI("penzl", AffineMatrix(terms), b, c, [(-20.0, 20.0)] * 3)


MODELS: dict[str, Callable[..., ParametricLTI]] = {
    "penzl": make_penzl,
    "heat_symmetric": make_heat_symmetric,
    "vanishing_diffusion": make_vanishing_diffusion,
    "fractional_heat": make_fractional_heat,
}


def make_model(name: str, grid_n: int | None = None) -> ParametricLTI:
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    if name == "penzl":
        return factory()
    return factory(grid_n) if grid_n is not None else factory()


def point_shift(model: ParametricLTI, P: ParameterPoint) -> complex:
    """Scalar ``z`` with ``M(P) = z I - A(p)``."""
    return complex(model.shift(np.array([P.omega]), np.array([P.p], dtype=float).reshape(1, -1))[0])


def param_matrix(model: ParametricLTI, p: Sequence[float]) -> sp.csc_matrix:
    return model.A.evaluate(ParameterPoint(0.0, tuple(p)))


def make_diagonal(diag: Sequence[float], b: Sequence[float] | None = None,
                  c: Sequence[float] | None = None, name: str = "diagonal") -> ParametricLTI:
    """Parameter-free model with ``A = diag(diag)``; ``b`` and ``c`` default to ones."""
    a = np.asarray(diag, dtype=float)
    n = len(a)
    bv = np.ones(n) if b is None else np.asarray(b, dtype=float)
    cv = np.ones(n) if c is None else np.asarray(c, dtype=float)
    A = AffineMatrix([(constant(1.0), sp.diags(a, format="csc"))])
    return ParametricLTI(name, A, AffineVector([(constant(1.0), bv)]), AffineVector([(constant(1.0), cv)]), [])
