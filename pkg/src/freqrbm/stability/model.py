"""Trained stability-factor models: query, upper bounds and file format."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from ..affine import AffineMatrix, ParameterGrid, ParameterPoint, subdomain_of
from .eigen import block_partition, smallest_sigma
from .nnscm import AnchorState, NNSCMState, nnscm_lower, nnscm_upper
from .scm import SCMState, scm_lower, scm_upper

FORMAT_VERSION = 1
MAGIC = "freqrbm-stability"


class DomainError(ValueError):
    """Query point outside every trained frequency subdomain."""


def _as_grid(P) -> tuple[ParameterGrid, bool]:
    if isinstance(P, ParameterPoint):
        return ParameterGrid([P.omega], np.array([P.p], dtype=float).reshape(1, -1)), True
    return P, False


def _finish(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


class StabilityModel:
    """Certified ``sigma_min`` lower bounds bound to an affine operator."""

    kind = ""

    def __init__(self, M: AffineMatrix):
        self.M = M

    def lower_bound(self, P):
        grid, scalar = _as_grid(P)
        return _finish(np.maximum(self._lower(grid), 0.0), scalar)

    def upper_bound(self, P):
        grid, scalar = _as_grid(P)
        return _finish(self._upper(grid), scalar)

    def query(self, P):
        """Certified lower bound ``sigma_min^LB(P) >= 0``."""
        return self.lower_bound(P)

    def _lower(self, grid):  # pragma: no cover - abstract
        raise NotImplementedError

    def _upper(self, grid):  # pragma: no cover - abstract
        raise NotImplementedError

    def _arrays(self) -> dict:
        return {}

    def save(self, path, meta: dict | None = None) -> None:
        header = {"magic": MAGIC, "format_version": FORMAT_VERSION, "kind": self.kind, "Q": self.M.Q,
                  "n": self.M.shape[0], "meta": meta or {}}
        arrays = self._arrays()
        arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
        buf = io.BytesIO()
        np.savez_compressed(buf, **arrays)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())


class ExactOracle(StabilityModel):
    """Exact ``sigma_min`` by eigen-solves; both bounds are the truth."""

    kind = "exact"

    def __init__(self, M: AffineMatrix, **eig_kw):
        super().__init__(M)
        self.blocks = block_partition(M.pattern())
        self.eig_kw = eig_kw

    def _lower(self, grid):
        theta = self.M.coefficients(grid)
        return np.array([smallest_sigma(self.M.assemble(t), blocks=self.blocks, **self.eig_kw)[0]
                         for t in theta])

    _upper = _lower


class TrainedSCM(StabilityModel):
    kind = "scm"

    def __init__(self, M: AffineMatrix, state: SCMState):
        super().__init__(M)
        self.state = state

    def _lower(self, grid):
        return scm_lower(self.state, self.M, grid)

    def _upper(self, grid):
        return scm_upper(self.state, self.M, grid)

    def _arrays(self):
        s = self.state
        return {"coords": s.coords, "sigmas": s.sigmas, "y": s.y, "rows": s.rows,
                "lam_min": s.lam_min, "lam_max": s.lam_max,
                "M_alpha": np.array(-1 if s.M_alpha is None else s.M_alpha),
                "history": np.array(s.history)}

    @classmethod
    def _from_arrays(cls, M, a):
        ma = int(a["M_alpha"])
        state = SCMState(a["coords"], a["sigmas"], a["y"], a["rows"], a["lam_min"], a["lam_max"],
                         None if ma < 0 else ma, list(a["history"]))
        return cls(M, state)


_ANCHOR_FIELDS = ("coords", "sigma", "y", "zbox", "sub_coords", "sub_rows", "betas", "z")


class TrainedNNSCM(StabilityModel):
    """One natural-norm SCM per frequency subdomain ``[edges[j-1], edges[j]]``."""

    kind = "nnscm"

    def __init__(self, M: AffineMatrix, states: list[NNSCMState], frequency_edges):
        super().__init__(M)
        self.states = states
        self.frequency_edges = np.asarray(frequency_edges, dtype=float)
        if len(states) != len(self.frequency_edges) - 1:
            raise ValueError("one NNSCM state per frequency subdomain required")

    def _check(self, grid):
        e = self.frequency_edges
        bad = (grid.omega < e[0]) | (grid.omega > e[-1])
        if np.any(bad):
            w = grid.omega[np.argmax(bad)]
            raise DomainError(f"frequency {w} outside the trained range [{e[0]}, {e[-1]}]")

    def _lower(self, grid):
        self._check(grid)
        return nnscm_lower(self.states, self.frequency_edges, self.M, grid)

    def _upper(self, grid):
        self._check(grid)
        return nnscm_upper(self.states, self.frequency_edges, self.M, grid)

    def subdomain(self, omega) -> np.ndarray:
        return subdomain_of(omega, self.frequency_edges)

    def _arrays(self):
        out = {"frequency_edges": self.frequency_edges}
        for j, st in enumerate(self.states):
            out[f"s{j}_hyper"] = np.array([-1 if st.M_alpha is None else st.M_alpha, st.inside,
                                           st.phi, st.eps, st.eps_beta, *st.omega_range], dtype=float)
            out[f"s{j}_history"] = np.array(st.history)
            out[f"s{j}_nanchors"] = np.array(len(st.anchors))
            for l, a in enumerate(st.anchors):
                for f in _ANCHOR_FIELDS:
                    out[f"s{j}_a{l}_{f}"] = np.asarray(getattr(a, f))
        return out

    @classmethod
    def _from_arrays(cls, M, a):
        edges = a["frequency_edges"]
        states = []
        for j in range(len(edges) - 1):
            h = a[f"s{j}_hyper"]
            anchors = [
                AnchorState(*[a[f"s{j}_a{l}_{f}"] if f != "sigma" else float(a[f"s{j}_a{l}_{f}"])
                              for f in _ANCHOR_FIELDS])
                for l in range(int(a[f"s{j}_nanchors"]))
            ]
            states.append(NNSCMState(j + 1, (float(h[5]), float(h[6])), anchors,
                                     None if h[0] < 0 else int(h[0]), bool(h[1]), float(h[2]),
                                     float(h[3]), float(h[4]), list(a[f"s{j}_history"])))
        return cls(M, states, edges)


def load_stability_model(path, M: AffineMatrix) -> tuple[StabilityModel, dict]:
    """Read a model written by :meth:`StabilityModel.save`; returns ``(model, meta)``."""
    with open(path, "rb") as fh:
        data = np.load(io.BytesIO(fh.read()), allow_pickle=False)
        arrays = {k: data[k] for k in data.files}
    try:
        header = json.loads(arrays.pop("header").tobytes().decode())
    except KeyError:
        raise ValueError(f"{path}: not a stability model file") from None
    if header.get("magic") != MAGIC:
        raise ValueError(f"{path}: not a stability model file")
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {header['format_version']}")
    if header["Q"] != M.Q or header["n"] != M.shape[0]:
        raise ValueError(f"{path}: trained for Q={header['Q']}, n={header['n']}; "
                         f"operator has Q={M.Q}, n={M.shape[0]}")
    kinds = {"scm": TrainedSCM, "nnscm": TrainedNNSCM}
    if header["kind"] == "exact":
        return ExactOracle(M), header["meta"]
    return kinds[header["kind"]]._from_arrays(M, arrays), header["meta"]


@dataclass
class BoundReport:
    """Bounds on a grid next to a reference ``sigma_min``."""

    lower: np.ndarray
    upper: np.ndarray
    sigma: np.ndarray

    def sandwich_violation(self, rel: float = 1e-8) -> float:
        """Largest relative violation of ``LB <= sigma <= UB`` (non-positive when it holds)."""
        s = np.maximum(self.sigma, np.finfo(float).tiny)
        return float(max(np.max((self.lower - self.sigma) / s), np.max((self.sigma - self.upper) / s))) - rel

    def relative_gap(self) -> np.ndarray:
        u2 = self.upper**2
        return np.where(u2 > 0, (u2 - self.lower**2) / np.where(u2 > 0, u2, 1.0), 0.0)


__all__ = [
    "DomainError", "StabilityModel", "ExactOracle", "TrainedSCM", "TrainedNNSCM",
    "load_stability_model", "BoundReport",
]
