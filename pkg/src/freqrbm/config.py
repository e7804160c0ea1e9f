"""Run configuration: INI files parsed into dataclasses.

Grid axes are written ``<spacing> <lo> <hi> <count>`` with spacing ``linear``
or ``log``, or as ``list v1 v2 ...``. Frequency subdomain edges are ``auto M``
(``0`` followed by ``M`` log-spaced edges between ``edge_lo`` and ``edge_hi``)
or ``list e0 e1 ...``. See ``configs/`` for complete examples.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .affine import ParameterGrid, log_frequency_partition, subdomain_frequencies, tensor_grid
from .fom import MODELS, ParametricLTI, make_model


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AxisSpec:
    spacing: str  # "linear", "log" or "list"
    lo: float = 0.0
    hi: float = 0.0
    count: int = 0
    values_: tuple[float, ...] = ()

    def values(self) -> np.ndarray:
        if self.spacing == "list":
            return np.array(self.values_, dtype=float)
        if self.spacing == "linear":
            return np.linspace(self.lo, self.hi, self.count)
        return np.logspace(np.log10(self.lo), np.log10(self.hi), self.count)

    @classmethod
    def parse(cls, text: str) -> "AxisSpec":
        parts = text.split()
        if not parts:
            raise ConfigError("empty axis specification")
        kind = parts[0].lower()
        try:
            if kind == "list":
                if len(parts) < 2:
                    raise ConfigError("list axis needs at least one value")
                return cls("list", values_=tuple(float(v) for v in parts[1:]))
            if kind in ("linear", "log") and len(parts) == 4:
                spec = cls(kind, float(parts[1]), float(parts[2]), int(parts[3]))
            else:
                raise ConfigError(f"axis must be '<linear|log> lo hi count' or 'list ...', got {text!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad number in axis {text!r}: {exc}") from None
        if spec.count < 1:
            raise ConfigError(f"axis count must be >= 1 in {text!r}")
        if spec.hi < spec.lo:
            raise ConfigError(f"axis upper end below lower end in {text!r}")
        if kind == "log" and spec.lo <= 0:
            raise ConfigError(f"log axis needs a positive lower end in {text!r}")
        return spec

    def format(self) -> str:
        if self.spacing == "list":
            return "list " + " ".join(repr(v) for v in self.values_)
        return f"{self.spacing} {self.lo!r} {self.hi!r} {self.count}"


@dataclass(frozen=True)
class EdgeSpec:
    mode: str  # "auto" or "list"
    M: int = 0
    lo: float = 1e-2
    hi: float = 1e3
    values_: tuple[float, ...] = ()

    def edges(self) -> np.ndarray:
        if self.mode == "list":
            return np.array(self.values_, dtype=float)
        return log_frequency_partition(self.lo, self.hi, self.M)

    @classmethod
    def parse(cls, text: str, lo: float = 1e-2, hi: float = 1e3) -> "EdgeSpec":
        parts = text.split()
        try:
            if parts and parts[0] == "auto" and len(parts) == 2:
                M = int(parts[1])
                if M < 1:
                    raise ConfigError("auto edges need M >= 1")
                return cls("auto", M, lo, hi)
            if parts and parts[0] == "list" and len(parts) >= 3:
                vals = tuple(float(v) for v in parts[1:])
                if np.any(np.diff(vals) <= 0):
                    raise ConfigError(f"frequency edges must increase strictly: {text!r}")
                return cls("list", values_=vals)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad number in edges {text!r}") from None
        raise ConfigError(f"edges must be 'auto M' or 'list e0 e1 ...', got {text!r}")

    def format(self) -> str:
        if self.mode == "list":
            return "list " + " ".join(repr(v) for v in self.values_)
        return f"auto {self.M}"


@dataclass(frozen=True)
class StabilityConfig:
    method: str = "scm"  # "scm" or "nnscm"
    eps: float = 0.8
    eps_beta: float = 0.99
    M_alpha: int | None = 20
    inside: bool = True
    phi: float = 0.0
    frequency: AxisSpec | None = None  # scm training frequencies
    edges: EdgeSpec | None = None  # nnscm subdomains
    per_subdomain: int = 5
    params: tuple[AxisSpec, ...] = ()  # empty: use the run's parameter axes


@dataclass(frozen=True)
class GreedyConfig:
    max_r0: int = 10
    tol: float = 0.0
    frequency: AxisSpec = AxisSpec("log", 1e-2, 1e3, 50)
    params: tuple[AxisSpec, ...] = ()
    track_truth: bool = False
    truth_samples: int = 200


@dataclass(frozen=True)
class VerifyConfig:
    frequency: AxisSpec | None = None  # Bode grid frequencies; default: greedy grid
    T: float = 10.0
    dt: float | None = None
    n_inputs: int = 5
    n_params: int = 5
    omega_max: float = 10.0


@dataclass(frozen=True)
class RunConfig:
    model: str
    grid_n: int | None = None
    params: tuple[AxisSpec, ...] = ()
    stability: StabilityConfig = field(default_factory=StabilityConfig)
    greedy: GreedyConfig = field(default_factory=GreedyConfig)
    tau: float = 1e-2
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    out: str = "out"
    seed: int = 0

    # ---- construction -----------------------------------------------------

    def build_model(self) -> ParametricLTI:
        return make_model(self.model, self.grid_n)

    def _param_axes(self, override) -> list[np.ndarray]:
        return [a.values() for a in (override or self.params)]

    def stability_grid(self) -> ParameterGrid:
        s = self.stability
        axes = self._param_axes(s.params)
        if s.method == "nnscm":
            edges = s.edges.edges()
            return tensor_grid(subdomain_frequencies(edges, s.per_subdomain), axes, frequency_edges=edges)
        return tensor_grid(s.frequency.values(), axes)

    def greedy_grid(self) -> ParameterGrid:
        g = self.greedy
        edges = self.stability.edges.edges() if self.stability.method == "nnscm" else None
        return tensor_grid(g.frequency.values(), self._param_axes(g.params), frequency_edges=edges)

    def bode_grid(self) -> ParameterGrid:
        if self.verify.frequency is None:
            return self.greedy_grid()
        return tensor_grid(self.verify.frequency.values(), self._param_axes(self.greedy.params))

    def validate(self) -> "RunConfig":
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        model = self.build_model()
        s = self.stability
        if s.method not in ("scm", "nnscm"):
            raise ConfigError(f"stability method must be scm or nnscm, got {s.method!r}")
        if s.method == "scm" and s.frequency is None:
            raise ConfigError("scm needs [stability] frequency")
        if s.method == "nnscm" and s.edges is None:
            raise ConfigError("nnscm needs [stability] edges")
        if not 0 < self.tau < 1:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        for axes, where in ((self.params, "[params]"), (s.params, "[stability]"), (self.greedy.params, "[greedy]")):
            if axes and len(axes) != model.d:
                raise ConfigError(f"{where} has {len(axes)} axes, model {self.model!r} has {model.d} parameters")
            for k, (a, (lo, hi)) in enumerate(zip(axes, model.param_box)):
                v = a.values()
                if v.min() < lo or v.max() > hi:
                    raise ConfigError(f"{where} axis p{k} leaves the parameter box [{lo}, {hi}]")
        if not self.params and model.d:
            raise ConfigError("[params] must give one axis per model parameter")
        if s.method == "nnscm":
            e = s.edges.edges()
            gw = self.greedy.frequency.values()
            if gw.min() < e[0] or gw.max() > e[-1]:
                raise ConfigError("greedy frequencies leave the stability subdomains")
        return self

    # ---- text round trip ----------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["run"] = {"model": self.model, "seed": str(self.seed), "out": self.out}
        if self.grid_n is not None:
            cp["run"]["grid_n"] = str(self.grid_n)
        cp["params"] = {f"p{k}": a.format() for k, a in enumerate(self.params)}
        s = self.stability
        st = {"method": s.method, "eps": repr(s.eps), "eps_beta": repr(s.eps_beta),
              "M_alpha": "inf" if s.M_alpha is None else str(s.M_alpha), "inside": str(s.inside).lower(),
              "phi": repr(s.phi), "per_subdomain": str(s.per_subdomain)}
        if s.frequency is not None:
            st["frequency"] = s.frequency.format()
        if s.edges is not None:
            st["edges"] = s.edges.format()
            st["edge_lo"], st["edge_hi"] = repr(s.edges.lo), repr(s.edges.hi)
        st.update({f"p{k}": a.format() for k, a in enumerate(s.params)})
        cp["stability"] = st
        g = self.greedy
        gr = {"max_r0": str(g.max_r0), "tol": repr(g.tol), "frequency": g.frequency.format(),
              "track_truth": str(g.track_truth).lower(), "truth_samples": str(g.truth_samples)}
        gr.update({f"p{k}": a.format() for k, a in enumerate(g.params)})
        cp["greedy"] = gr
        cp["realify"] = {"tau": repr(self.tau)}
        v = self.verify
        ve = {"T": repr(v.T), "n_inputs": str(v.n_inputs), "n_params": str(v.n_params),
              "omega_max": repr(v.omega_max)}
        if v.dt is not None:
            ve["dt"] = repr(v.dt)
        if v.frequency is not None:
            ve["frequency"] = v.frequency.format()
        cp["verify"] = ve
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def section_hash(self, section: str) -> str:
        """Digest of the settings one stage depends on (model, parameters and that section)."""
        cp = configparser.ConfigParser()
        cp.read_string(self.to_ini())
        keep = {"model": self.model, "grid_n": self.grid_n, "params": dict(cp["params"]),
                section: dict(cp[section])}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]

    def as_dict(self) -> dict:
        return asdict(self)


def _axes(section, prefix="p") -> tuple[AxisSpec, ...]:
    keys = sorted((k for k in section if k.startswith(prefix) and k[len(prefix):].isdigit()),
                  key=lambda k: int(k[len(prefix):]))
    if [int(k[len(prefix):]) for k in keys] != list(range(len(keys))):
        raise ConfigError(f"parameter axes must be numbered p0, p1, ... without gaps, got {keys}")
    return tuple(AxisSpec.parse(section[k]) for k in keys)


def _bool(section, key, default):
    try:
        return section.getboolean(key, fallback=default)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key}: {exc}") from None


def _num(section, key, default, kind=float):
    if key not in section:
        return default
    raw = section[key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    if "run" not in cp or "model" not in cp["run"]:
        raise ConfigError("[run] model is required")
    run = cp["run"]
    empty = configparser.SectionProxy(cp, "DEFAULT")
    sec = lambda name: cp[name] if name in cp else empty  # noqa: E731

    s = sec("stability")
    ma = s.get("M_alpha", "20").strip().lower()
    try:
        M_alpha = None if ma in ("inf", "none") else int(ma)
    except ValueError:
        raise ConfigError(f"[stability] M_alpha = {ma!r} must be an integer or inf") from None
    edge_lo, edge_hi = _num(s, "edge_lo", 1e-2), _num(s, "edge_hi", 1e3)
    stability = StabilityConfig(
        method=s.get("method", "scm").strip().lower(),
        eps=_num(s, "eps", 0.8),
        eps_beta=_num(s, "eps_beta", 0.99),
        M_alpha=M_alpha,
        inside=_bool(s, "inside", True),
        phi=_num(s, "phi", 0.0),
        frequency=AxisSpec.parse(s["frequency"]) if "frequency" in s else None,
        edges=EdgeSpec.parse(s["edges"], edge_lo, edge_hi) if "edges" in s else None,
        per_subdomain=_num(s, "per_subdomain", 5, int),
        params=_axes(s),
    )
    g = sec("greedy")
    greedy = GreedyConfig(
        max_r0=_num(g, "max_r0", 10, int),
        tol=_num(g, "tol", 0.0),
        frequency=AxisSpec.parse(g["frequency"]) if "frequency" in g else GreedyConfig.frequency,
        params=_axes(g),
        track_truth=_bool(g, "track_truth", False),
        truth_samples=_num(g, "truth_samples", 200, int),
    )
    v = sec("verify")
    verify = VerifyConfig(
        frequency=AxisSpec.parse(v["frequency"]) if "frequency" in v else None,
        T=_num(v, "T", 10.0),
        dt=_num(v, "dt", None),
        n_inputs=_num(v, "n_inputs", 5, int),
        n_params=_num(v, "n_params", 5, int),
        omega_max=_num(v, "omega_max", 10.0),
    )
    return RunConfig(
        model=run["model"].strip(),
        grid_n=_num(run, "grid_n", None, int),
        params=_axes(sec("params")),
        stability=stability,
        greedy=greedy,
        tau=_num(sec("realify"), "tau", 1e-2),
        verify=verify,
        out=run.get("out", "out"),
        seed=_num(run, "seed", 0, int),
    )


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text()).validate()


BUNDLED = Path(__file__).parent / "configs"


def bundled_config(name: str) -> RunConfig:
    """One of the shipped experiment configs, e.g. ``"symmetric"``."""
    return load_config(BUNDLED / f"{name}.cfg")
