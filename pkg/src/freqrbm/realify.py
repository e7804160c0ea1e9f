"""Real reduced bases from complex ones and the projected real LTI system."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io as sio

from .affine import CoefficientFn, ParameterGrid, ParameterPoint
from .fom import ParametricLTI


class RealificationError(ValueError):
    pass


@dataclass(frozen=True)
class RealBasis:
    """Orthonormal real basis from a POD of ``[Re Phi_c, Im Phi_c]``."""

    Phi: np.ndarray  # (n, r)
    singular_values: np.ndarray  # (2 r0,)
    tau: float

    @property
    def r(self) -> int:
        return self.Phi.shape[1]


def energy_rank(singular_values: np.ndarray, tau: float) -> int:
    """Smallest ``k >= 1`` whose discarded relative energy ``sqrt(sum_{j>k} s_j^2 / sum s_j^2)`` is ``<= tau``."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        raise RealificationError("all-zero basis")
    tail = np.sqrt(np.maximum(total - np.cumsum(s2), 0.0) / total)
    return int(np.argmax(tail <= tau)) + 1


def realify(Phi_c: np.ndarray, tau: float = 1e-2) -> RealBasis:
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    Phi_c = np.asarray(Phi_c)
    if Phi_c.ndim == 1:
        Phi_c = Phi_c[:, None]
    stack = np.hstack([Phi_c.real, Phi_c.imag])
    if not np.any(stack):
        raise RealificationError("all-zero basis")
    U, s, _ = np.linalg.svd(stack, full_matrices=False)
    r = energy_rank(s, tau)
    return RealBasis(np.ascontiguousarray(U[:, :r]), s, tau)


@dataclass
class ReducedLTI:
    """Real Galerkin reduced system ``x~' = A~(p) x~ + b~(p) u, y = c~(p)^T x~``.

    ``A_terms``, ``b_terms`` and ``c_terms`` share the coefficient functions of
    the full model; ``shift`` gives ``z`` in ``M = z I - A`` (``i*omega`` for
    ordinary time derivatives).
    """

    A_terms: np.ndarray  # (Q_A, r, r)
    b_terms: np.ndarray  # (Q_b, r)
    c_terms: np.ndarray  # (Q_c, r)
    A_thetas: list[CoefficientFn]
    b_thetas: list[CoefficientFn]
    c_thetas: list[CoefficientFn]
    basis: RealBasis
    shift: object = None
    name: str = ""

    @property
    def r(self) -> int:
        return self.A_terms.shape[1]

    @staticmethod
    def _coeffs(thetas, grid):
        return np.column_stack([t(grid.omega, grid.p) for t in thetas])

    def A(self, p) -> np.ndarray:
        P = ParameterPoint(0.0, tuple(np.atleast_1d(p)))
        g = ParameterGrid([P.omega], np.array([P.p]).reshape(1, -1))
        return np.tensordot(self._coeffs(self.A_thetas, g)[0], self.A_terms, axes=1)

    def b(self, p) -> np.ndarray:
        g = ParameterGrid([0.0], np.atleast_1d(np.asarray(p, dtype=float)).reshape(1, -1))
        return self._coeffs(self.b_thetas, g)[0] @ self.b_terms

    def c(self, p) -> np.ndarray:
        g = ParameterGrid([0.0], np.atleast_1d(np.asarray(p, dtype=float)).reshape(1, -1))
        return self._coeffs(self.c_thetas, g)[0] @ self.c_terms

    def transfer(self, grid: ParameterGrid) -> np.ndarray:
        """``c~^T (z I - A~)^{-1} b~`` at every grid point."""
        if isinstance(grid, ParameterPoint):
            return self.transfer(ParameterGrid([grid.omega], np.array([grid.p]).reshape(1, -1)))[0]
        thA = self._coeffs(self.A_thetas, grid)
        thb = self._coeffs(self.b_thetas, grid)
        thc = self._coeffs(self.c_thetas, grid)
        z = np.asarray(self.shift(grid.omega, grid.p), dtype=complex)
        A = np.einsum("nq,qij->nij", thA, self.A_terms)
        Mz = z[:, None, None] * np.eye(self.r) - A
        x = np.linalg.solve(Mz, (thb @ self.b_terms)[..., None].astype(complex))[..., 0]
        return np.einsum("ni,ni->n", thc @ self.c_terms, x)

    def export(self, directory) -> Path:
        """Matrix Market files for every term plus ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = {"A": [], "b": [], "c": []}
        for j, Aj in enumerate(self.A_terms):
            sio.mmwrite(d / f"A_{j}.mtx", Aj)
            files["A"].append(f"A_{j}.mtx")
        for key, terms in (("b", self.b_terms), ("c", self.c_terms)):
            for j, v in enumerate(terms):
                sio.mmwrite(d / f"{key}_{j}.mtx", v[:, None])
                files[key].append(f"{key}_{j}.mtx")
        sio.mmwrite(d / "Phi.mtx", self.basis.Phi)
        manifest = {
            "name": self.name, "r": self.r, "tau": self.basis.tau,
            "singular_values": self.basis.singular_values.tolist(),
            "files": files, "Phi": "Phi.mtx",
            "coefficients": {"A": [t.identifier for t in self.A_thetas],
                             "b": [t.identifier for t in self.b_thetas],
                             "c": [t.identifier for t in self.c_thetas]},
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
        return d


def project_time_domain(model: ParametricLTI, basis: RealBasis) -> ReducedLTI:
    """Term-wise Galerkin projection ``Phi^T A_j Phi``, ``Phi^T b_j``, ``Phi^T c_j``."""
    if not model.is_real():
        raise RealificationError("realification requires a real full-order system")
    Phi = basis.Phi
    if np.iscomplexobj(Phi):
        raise RealificationError("basis must be real")
    A_terms = np.array([(Phi.T @ (Aj @ Phi)).real for Aj in model.A.matrices])
    b_terms = (model.b.as_matrix().T @ Phi).real
    c_terms = (model.c.as_matrix().T @ Phi).real
    return ReducedLTI(A_terms, b_terms, c_terms, list(model.A.thetas), list(model.b.thetas),
                      list(model.c.thetas), basis, model.shift, model.name)


def export_basis(directory, Phi: np.ndarray, name: str = "Phi.mtx") -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    sio.mmwrite(d / name, Phi)
    return d / name

