"""ROM quality checks: Bode errors, discrete H-infinity surrogate, time simulation.

Crank-Nicolson with trapezoidal input averaging maps ``s = (2/dt)(z-1)/(z+1)``,
so the discrete transfer function is ``H`` itself on the imaginary axis and
the output bound ``||y - y~|| <= sup |H - H~| ||u||`` carries over to the
discrete signals exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .affine import ParameterGrid, ParameterPoint
from .fom import ParametricLTI, transfer_function
from .realify import ReducedLTI
from .stability.eigen import block_partition, dense_sigma_oracle

__all__ = [
    "BodeGrid", "SimResult", "OutputBoundReport", "bode_error", "hinf_error_estimate", "simulate",
    "check_output_bound", "dense_sigma_oracle", "sigma_oracle", "bandlimited_input", "l2_norm",
]


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class BodeGrid:
    grid: ParameterGrid
    H_full: np.ndarray
    H_reduced: np.ndarray
    rel_err: np.ndarray
    absolute: np.ndarray  # True where |H| = 0 and rel_err holds the absolute error

    @property
    def max_rel_err(self) -> float:
        return float(np.max(self.rel_err))

    def to_csv(self, path) -> None:
        d = self.grid.d
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega", *[f"p{k}" for k in range(d)], "abs_H", "abs_H_reduced", "rel_err", "absolute"])
            for c, H, Hr, e, a in zip(self.grid.coords(), self.H_full, self.H_reduced, self.rel_err, self.absolute):
                w.writerow([*map(_fmt, c), _fmt(abs(H)), _fmt(abs(Hr)), _fmt(e), int(a)])


def bode_error(model: ParametricLTI, rom, grid: ParameterGrid, H_full: np.ndarray | None = None) -> BodeGrid:
    """Full and reduced transfer values with ``|H - H~| / |H|`` pointwise.

    ``rom`` is anything with ``transfer(grid)``; pass ``H_full`` to reuse full solves.
    """
    if H_full is None:
        H_full = transfer_function(model, grid)
    H_red = np.asarray(rom.transfer(grid))
    err = np.abs(H_full - H_red)
    mag = np.abs(H_full)
    zero = mag == 0
    rel = np.where(zero, err, err / np.where(zero, 1.0, mag))
    return BodeGrid(grid, H_full, H_red, rel, zero)


def hinf_error_estimate(model: ParametricLTI, rom, p, omega_grid) -> float:
    """``max_omega |H - H~|`` over ``omega_grid``, a surrogate for the H-infinity error."""
    omega = np.asarray(omega_grid, dtype=float)
    grid = ParameterGrid(omega, np.tile(np.asarray(p, dtype=float), (len(omega), 1)))
    H = transfer_function(model, grid)
    return float(np.max(np.abs(H - np.asarray(rom.transfer(grid)))))


@dataclass
class SimResult:
    times: np.ndarray
    y: np.ndarray
    dt: float
    scheme: str = "crank-nicolson"


def write_simulation_csv(path, full: SimResult, reduced: SimResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y", "y_reduced"])
        for t, a, b in zip(full.times, full.y, reduced.y):
            w.writerow([_fmt(t), _fmt(a), _fmt(b)])


def _system_matrices(system, p):
    if isinstance(system, ReducedLTI):
        return system.A(p), system.b(p), system.c(p)
    if isinstance(system, ParametricLTI):
        if not system.time_domain:
            raise ValueError(f"model {system.name!r} has no first-order time-domain form")
        P = ParameterPoint(0.0, tuple(np.atleast_1d(p)))
        A = system.A.evaluate(P)
        if np.any(A.data.imag != 0):
            raise ValueError("simulation requires a real system")
        return A.real.tocsc(), system.b.evaluate(P).real, system.c.evaluate(P).real
    raise TypeError(f"cannot simulate {type(system).__name__}")


def simulate(system, p, u: Callable[[np.ndarray], np.ndarray], T: float, dt: float | None = None) -> SimResult:
    """Crank-Nicolson from ``x(0) = 0``; ``u`` maps an array of times to input values."""
    if dt is None:
        dt = T / 2000
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    nsteps = int(round(T / dt))
    times = dt * np.arange(nsteps + 1)
    uu = np.asarray(u(times), dtype=float)
    A, b, c = _system_matrices(system, p)
    n = A.shape[0]
    if sp.issparse(A):
        I = sp.identity(n, format="csc")
        try:
            lu = spla.splu((I - dt / 2 * A).tocsc())
        except RuntimeError as exc:
            raise np.linalg.LinAlgError(f"Crank-Nicolson factorization failed: {exc}") from exc
        solve = lu.solve
        Bplus = (I + dt / 2 * A).tocsr()
    else:
        fac = sla.lu_factor(np.eye(n) - dt / 2 * A)
        solve = lambda v: sla.lu_solve(fac, v)  # noqa: E731
        Bplus = np.eye(n) + dt / 2 * A
    x = np.zeros(n)
    y = np.zeros(nsteps + 1)
    for k in range(nsteps):
        x = solve(Bplus @ x + dt / 2 * (uu[k] + uu[k + 1]) * b)
        y[k + 1] = c @ x
    if not np.all(np.isfinite(y)):
        raise FloatingPointError("non-finite simulation output")
    return SimResult(times, y, dt)


def l2_norm(values: np.ndarray, dt: float) -> float:
    """Rectangle-rule ``L2(0, T)`` norm of samples on a uniform grid."""
    return float(np.sqrt(dt * np.sum(np.asarray(values) ** 2)))


def bandlimited_input(seed: int, omega_max: float = 10.0, n_modes: int = 8, T: float = 10.0):
    """Random sum of sinusoids below ``omega_max``, tapered to vanish at ``t = 0`` and ``t = T``."""
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(0, omega_max, n_modes)
    phases = rng.uniform(0, 2 * np.pi, n_modes)
    amps = rng.standard_normal(n_modes)

    def u(t):
        t = np.asarray(t, dtype=float)
        s = np.sum(amps[:, None] * np.sin(freqs[:, None] * t[None, :] + phases[:, None]), axis=0)
        return s * np.sin(np.pi * np.clip(t / T, 0, 1)) ** 2

    return u


@dataclass
class OutputBoundReport:
    lhs: float  # ||y - y~||
    rhs: float  # delta_max * ||c(p)|| * ||u||
    delta_max: float
    c_norm: float
    u_norm: float

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else np.inf


def check_output_bound(model: ParametricLTI, rom: ReducedLTI, delta_max: float, p, u, T: float,
                       dt: float | None = None) -> OutputBoundReport:
    """Both sides of ``||y - y~||_{L2(0,T)} <= delta_max ||c(p)|| ||u||_{L2(0,T)}`` (SISO)."""
    full = simulate(model, p, u, T, dt)
    red = simulate(rom, p, u, T, dt)
    lhs = l2_norm(full.y - red.y, full.dt)
    un = l2_norm(u(full.times), full.dt)
    cn = model.output_norm(p)
    return OutputBoundReport(lhs, delta_max * cn * un, delta_max, cn, un)


def _normal_blocks(A: np.ndarray, blocks) -> bool:
    for b in blocks:
        Ab = A[np.ix_(b, b)]
        if not np.allclose(Ab @ Ab.conj().T, Ab.conj().T @ Ab, rtol=0, atol=1e-12 * max(1.0, np.abs(Ab).max() ** 2)):
            return False
    return True


def sigma_oracle(model: ParametricLTI, grid: ParameterGrid, max_n: int = 2000) -> np.ndarray:
    """Reference ``sigma_min(M(P))`` on a grid.

    When ``M = z I - A(p)`` with normal ``A(p)`` the value is ``min_k |z - lambda_k|``
    from one dense eigen-decomposition per parameter vector; otherwise a dense
    SVD per point.
    """
    out = np.empty(len(grid))
    if model.shift is None:
        for i, P in enumerate(grid):
            out[i] = dense_sigma_oracle(model.M.evaluate(P), max_n)
        return out
    blocks = block_partition(model.A.pattern())
    z_all = np.asarray(model.shift(grid.omega, grid.p), dtype=complex)
    keys, inverse = np.unique(grid.p, axis=0, return_inverse=True)
    for k, p in enumerate(keys):
        idx = np.flatnonzero(inverse.ravel() == k)
        A = model.A.evaluate(ParameterPoint(0.0, tuple(p))).toarray()
        if np.array_equal(A, A.conj().T):
            lam = np.concatenate([np.linalg.eigvalsh(A[np.ix_(b, b)]) for b in blocks])
            out[idx] = np.min(np.abs(z_all[idx, None] - lam[None, :]), axis=1)
        elif _normal_blocks(A, blocks):
            lam = np.concatenate([np.linalg.eigvals(A[np.ix_(b, b)]) for b in blocks])
            out[idx] = np.min(np.abs(z_all[idx, None] - lam[None, :]), axis=1)
        else:
            for i in idx:
                out[i] = dense_sigma_oracle(model.M.evaluate(grid[i]), max_n)
    return out
