"""Command line pipeline: stability training, greedy, realification, verification.

Every stage reads its inputs from the output directory and writes its own
artifacts there, so stages can be rerun separately::

    freqrbm scm-train --config penzl.cfg --out runs/penzl
    freqrbm reduce --config penzl.cfg --out runs/penzl
    freqrbm bode --config penzl.cfg --out runs/penzl
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy
import scipy.io as sio

from . import __version__
from .affine import ParameterGrid
from .config import ConfigError, RunConfig, load_config
from .fom import ParametricLTI, SolveError
from .rbm import GreedyTrace, ReducedBasis, StabilityError, run_greedy
from .realify import RealBasis, ReducedLTI, project_time_domain, realify
from .stability import lp
from .stability.model import StabilityModel, TrainedNNSCM, TrainedSCM, load_stability_model
from .stability.nnscm import nnscm_train
from .stability.scm import scm_train
from .verify import (
    bandlimited_input,
    bode_error,
    check_output_bound,
    sigma_oracle,
    simulate,
    write_simulation_csv,
)

log = logging.getLogger("freqrbm")

STAGES = ("stability", "greedy", "realify", "bode")
ORACLE_MAX_N = 2000

SCM_MODEL = "scm_model.bin"
TRACE = "greedy_trace.csv"
BASIS_COMPLEX = "basis_complex"
BASIS_REAL = "basis_real"
REDUCED_LTI = "reduced_lti"
BODE = "bode_grid.csv"
STABILITY_GRID = "stability_grid.csv"
MANIFEST = "manifest.json"

PRODUCER = {
    SCM_MODEL: "scm-train (or reduce)",
    BASIS_COMPLEX: "reduce --stage greedy",
    BASIS_REAL: "reduce --stage realify",
    REDUCED_LTI: "reduce --stage realify",
    TRACE: "reduce --stage greedy",
}


class MissingArtifact(FileNotFoundError):
    pass


class Run:
    """Output directory with manifest bookkeeping."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        path = out / MANIFEST
        self.manifest = json.loads(path.read_text()) if path.is_file() else {}
        self.manifest.update({
            "config": cfg.to_ini(),
            "versions": {"freqrbm": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "grids": {"frequency_endpoints": "inclusive"},
        })
        self.manifest.setdefault("wall_times", {})
        self.manifest.setdefault("stages", {})
        self._model = None

    @property
    def model(self) -> ParametricLTI:
        if self._model is None:
            self._model = self.cfg.build_model()
        return self._model

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise MissingArtifact(f"missing artifact {p}; produce it with `freqrbm {PRODUCER.get(name, 'reduce')}`")
        return p

    def mark(self, stage: str, status: str, seconds: float | None = None, **info) -> None:
        self.manifest["stages"][stage] = {"status": status, **info}
        if seconds is not None:
            self.manifest["wall_times"][stage] = seconds
        self.save()

    def save(self) -> None:
        self.path(MANIFEST).write_text(json.dumps(self.manifest, indent=2, default=float))


def _fmt(x) -> str:
    return repr(float(x))


# ---- stages ----------------------------------------------------------------


def train_stability(run: Run) -> StabilityModel:
    cfg, s = run.cfg, run.cfg.stability
    M = run.model.M
    grid = cfg.stability_grid()
    run.model.check_grid(grid)
    log.info("training %s on %d points", s.method, len(grid))
    if s.method == "scm":
        tr = scm_train(M, grid, eps=s.eps, M_alpha=s.M_alpha)
        model, lower, upper = TrainedSCM(M, tr.state), tr.lower, tr.upper
        info = {"points": tr.state.k, "max_gap": float(tr.gap.max())}
    else:
        tr = nnscm_train(M, grid, s.edges.edges(), eps=s.eps, eps_beta=s.eps_beta, M_alpha=s.M_alpha,
                         inside=s.inside, phi=s.phi)
        model = TrainedNNSCM(M, tr.states, tr.frequency_edges)
        lower, upper = tr.lower, tr.upper
        info = {"anchors": [len(st.anchors) for st in tr.states],
                "subsamples": [sum(len(a.betas) for a in st.anchors) for st in tr.states]}
    model.save(run.path(SCM_MODEL), meta={"stability_hash": cfg.section_hash("stability"), **info})
    write_stability_grid(run.path(STABILITY_GRID), grid, lower, upper, None)
    return model


def load_stability(run: Run) -> StabilityModel:
    model, meta = load_stability_model(run.require(SCM_MODEL), run.model.M)
    if meta.get("stability_hash") != run.cfg.section_hash("stability"):
        log.warning("%s was trained with different stability settings", SCM_MODEL)
    return model


def write_stability_grid(path, grid: ParameterGrid, lower, upper, sigma) -> None:
    d = grid.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", *[f"p{k}" for k in range(d)], "sigma_lb", "sigma_ub", "sigma_oracle"])
        sig = np.full(len(grid), np.nan) if sigma is None else sigma
        for c, lo, up, s in zip(grid.coords(), lower, upper, sig):
            w.writerow([*map(_fmt, c), _fmt(lo), _fmt(up), _fmt(s)])


def run_greedy_stage(run: Run, stability: StabilityModel) -> tuple[ReducedBasis, GreedyTrace]:
    cfg, g = run.cfg, run.cfg.greedy
    grid = cfg.greedy_grid()
    truth = None
    if g.track_truth:
        rng = np.random.default_rng(cfg.seed)
        truth = np.sort(rng.choice(len(grid), size=min(g.truth_samples, len(grid)), replace=False))
    tol = g.tol / run.model.norm_scale
    rb, trace = run_greedy(run.model, grid, stability, max_r0=g.max_r0, tol=tol, truth_index=truth)
    trace.to_csv(run.path(TRACE), grid.d)
    d = run.path(BASIS_COMPLEX)
    d.mkdir(exist_ok=True)
    sio.mmwrite(d / "Phi.mtx", rb.Phi)
    with open(d / "selected.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", *[f"p{k}" for k in range(grid.d)]])
        for P in rb.selected:
            w.writerow([_fmt(P.omega), *map(_fmt, P.p)])
    return rb, trace


def load_complex_basis(run: Run) -> np.ndarray:
    return np.asarray(sio.mmread(run.require(BASIS_COMPLEX) / "Phi.mtx"), dtype=complex)


def realify_stage(run: Run, Phi_c: np.ndarray) -> ReducedLTI:
    basis = realify(Phi_c, run.cfg.tau)
    d = run.path(BASIS_REAL)
    d.mkdir(exist_ok=True)
    sio.mmwrite(d / "Phi.mtx", basis.Phi)
    np.savetxt(d / "singular_values.csv", basis.singular_values, delimiter=",", fmt="%.17g",
               header="singular_value", comments="")
    rom = project_time_domain(run.model, basis)
    rom.export(run.path(REDUCED_LTI))
    return rom


def load_reduced_lti(run: Run) -> ReducedLTI:
    d = run.require(REDUCED_LTI)
    man = json.loads((d / "manifest.json").read_text())
    model = run.model
    ids = {"A": [t.identifier for t in model.A.thetas], "b": [t.identifier for t in model.b.thetas],
           "c": [t.identifier for t in model.c.thetas]}
    if man["coefficients"] != ids:
        raise ValueError(f"{d} was produced for a different model ({man['name']!r})")
    A = np.array([np.asarray(sio.mmread(d / f)) for f in man["files"]["A"]])
    b = np.array([np.asarray(sio.mmread(d / f)).ravel() for f in man["files"]["b"]])
    c = np.array([np.asarray(sio.mmread(d / f)).ravel() for f in man["files"]["c"]])
    basis = RealBasis(np.asarray(sio.mmread(d / man["Phi"])), np.array(man["singular_values"]), man["tau"])
    return ReducedLTI(A, b, c, list(model.A.thetas), list(model.b.thetas), list(model.c.thetas), basis,
                      model.shift, model.name)


def bode_stage(run: Run, rom: ReducedLTI) -> float:
    grid = run.cfg.bode_grid()
    bg = bode_error(run.model, rom, grid)
    bg.to_csv(run.path(BODE))
    return bg.max_rel_err


# ---- subcommands ---------------------------------------------------------------


def _timed(run: Run, stage: str, fn, *args):
    run.mark(stage, "running")
    t0 = time.perf_counter()
    try:
        out = fn(run, *args)
    except Exception:
        run.mark(stage, "failed", time.perf_counter() - t0)
        raise
    run.mark(stage, "done", time.perf_counter() - t0)
    return out


def cmd_scm_train(run: Run, args) -> int:
    _timed(run, "stability", train_stability)
    return 0


def cmd_reduce(run: Run, args) -> int:
    stages = STAGES if args.stage is None else (args.stage,)
    stability = rb = rom = None
    for stage in stages:
        if stage == "stability":
            if args.stage is None and run.path(SCM_MODEL).exists():
                _, meta = load_stability_model(run.path(SCM_MODEL), run.model.M)
                if meta.get("stability_hash") == run.cfg.section_hash("stability"):
                    log.info("reusing %s", SCM_MODEL)
                    stability = load_stability(run)
                    continue
            stability = _timed(run, "stability", train_stability)
        elif stage == "greedy":
            stability = stability or load_stability(run)
            rb, trace = _timed(run, "greedy", run_greedy_stage, stability)
            run.manifest["stages"]["greedy"].update(
                {"status_detail": trace.status, "r0": rb.r0,
                 "max_estimator_scaled": float(trace.records[-1].max_estimator * run.model.norm_scale)})
            run.save()
        elif stage == "realify":
            Phi_c = rb.Phi if rb is not None else load_complex_basis(run)
            rom = _timed(run, "realify", realify_stage, Phi_c)
            run.manifest["stages"]["realify"]["r"] = rom.r
            run.save()
        elif stage == "bode":
            rom = rom or load_reduced_lti(run)
            err = _timed(run, "bode", bode_stage, rom)
            run.manifest["stages"]["bode"]["max_rel_err"] = err
            run.save()
            print(f"max Bode relative error {err:.3e}")
    return 0


def cmd_bode(run: Run, args) -> int:
    rom = load_reduced_lti(run)
    err = _timed(run, "bode", bode_stage, rom)
    print(f"max Bode relative error {err:.3e}")
    return 0


def _simulate(run: Run) -> list[dict]:
    cfg, model = run.cfg, run.model
    if not model.time_domain:
        raise ValueError(f"model {model.name!r} has no first-order time-domain form to simulate")
    rom = load_reduced_lti(run)
    stability = load_stability(run)
    grid = cfg.greedy_grid()
    real_rb = ReducedBasis.from_basis(model, rom.basis.Phi)
    delta_max = float(np.max(real_rb.error_estimator(grid, stability)))
    rng = np.random.default_rng(cfg.seed)
    box = np.array(model.param_box)
    v = cfg.verify
    rows = []
    sim_dir = run.path("simulations")
    sim_dir.mkdir(exist_ok=True)
    for i in range(v.n_params):
        p = rng.uniform(box[:, 0], box[:, 1])
        for j in range(v.n_inputs):
            u = bandlimited_input(int(rng.integers(2**31)), v.omega_max, T=v.T)
            rep = check_output_bound(model, rom, delta_max, p, u, v.T, v.dt)
            full = simulate(model, p, u, v.T, v.dt)
            red = simulate(rom, p, u, v.T, v.dt)
            write_simulation_csv(sim_dir / f"sim_p{i}_u{j}.csv", full, red)
            rows.append({"param_index": i, "input_index": j, **{f"p{k}": float(x) for k, x in enumerate(p)},
                         "lhs": rep.lhs, "rhs": rep.rhs, "ratio": rep.ratio})
    with open(run.path("output_bound.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(x) if isinstance(x, float) else x) for k, x in r.items()})
    return rows


def cmd_simulate(run: Run, args) -> int:
    rows = _timed(run, "simulate", _simulate)
    worst = max(r["ratio"] for r in rows)
    print(f"output bound: worst ratio lhs/rhs = {worst:.3e} over {len(rows)} simulations")
    return 0 if worst <= 1.1 else 1


def _oracle(run: Run) -> int:
    model = run.model
    stability = load_stability(run)
    grid = run.cfg.stability_grid()
    lower = stability.lower_bound(grid)
    upper = stability.upper_bound(grid)
    if model.n > ORACLE_MAX_N:
        raise ValueError(f"dense oracle limited to n <= {ORACLE_MAX_N}, model has n = {model.n}")
    sigma = sigma_oracle(model, grid)
    write_stability_grid(run.path(STABILITY_GRID), grid, lower, upper, sigma)
    slack = 1e-8 * sigma
    violations = int(np.sum((lower > sigma + slack) | (sigma > upper + slack)))
    run.manifest["stages"].setdefault("oracle", {}).update(
        {"violations": violations, "points": len(grid),
         "min_lb_ratio": float(np.min(lower / sigma))})
    return violations


def cmd_oracle(run: Run, args) -> int:
    violations = _timed(run, "oracle", _oracle)
    print(f"sandwich violations: {violations}")
    return 0 if violations == 0 else 1


COMMANDS = {
    "reduce": cmd_reduce,
    "scm-train": cmd_scm_train,
    "bode": cmd_bode,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freqrbm", description="Certified reduced basis for parametric LTI systems.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for LP batches")
    ap.add_argument("--seed", type=int, help="overrides [run] seed")
    ap.add_argument("--stage", choices=STAGES, help="with reduce: run only this stage from stored artifacts")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out=args.out)
        lp.set_threads(args.threads)
        run = Run(cfg, Path(cfg.out))
        return COMMANDS[args.command](run, args)
    except (ConfigError, MissingArtifact) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolveError, StabilityError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser"]
