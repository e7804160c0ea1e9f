"""Run the bundled experiments end to end and summarize the artifacts.

Usage::

    python3 scripts/run_experiments.py                  # all bundled configs
    python3 scripts/run_experiments.py penzl symmetric  # a subset
    python3 scripts/run_experiments.py --out runs --skip-oracle

For every config this runs ``reduce``, then the dense ``oracle`` sweep when the
model is small enough, then ``simulate`` for models with a time-domain form.
A one-line summary per experiment is printed from the run manifests.
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from freqrbm.cli import ORACLE_MAX_N, main
from freqrbm.config import BUNDLED, bundled_config

NAMES = sorted(p.stem for p in BUNDLED.glob("*.cfg"))


def tightness(path: Path) -> str:
    rows = list(csv.DictReader(open(path)))
    lb = np.array([float(r["sigma_lb"]) for r in rows])
    sig = np.array([float(r["sigma_oracle"]) for r in rows])
    if np.isnan(sig).all():
        return ""
    q = np.quantile(lb / sig, [0.1, 0.5])
    return f"LB/sigma q10={q[0]:.3f} median={q[1]:.3f} share>=0.1: {np.mean(lb >= 0.1 * sig):.3f}"


def run(name: str, out: Path, oracle: bool, sim: bool, verbose: bool) -> None:
    cfg_path = str(BUNDLED / f"{name}.cfg")
    d = out / name
    common = ["--config", cfg_path, "--out", str(d)] + (["-v"] if verbose else [])
    if main(["reduce", *common]) != 0:
        print(f"{name}: reduce failed")
        return
    model = bundled_config(name).build_model()
    if oracle and model.n <= ORACLE_MAX_N:
        main(["oracle", *common])
    if sim and model.time_domain:
        main(["simulate", *common])
    man = json.loads((d / "manifest.json").read_text())
    st = man["stages"]
    times = ", ".join(f"{k} {v:.0f}s" for k, v in man["wall_times"].items())
    print(f"{name}: r0={st['greedy']['r0']} r={st['realify']['r']} "
          f"max scaled estimator {st['greedy']['max_estimator_scaled']:.3e} "
          f"max Bode rel err {st['bode']['max_rel_err']:.3e} ({times})")
    if "oracle" in st:
        print(f"  oracle: {st['oracle']['violations']} violations; {tightness(d / 'stability_grid.csv')}")


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", metavar="name",
                    help=f"experiments to run (default: all of {', '.join(NAMES)})")
    ap.add_argument("--out", default="runs", help="parent output directory")
    ap.add_argument("--skip-oracle", action="store_true")
    ap.add_argument("--skip-simulate", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    unknown = sorted(set(args.names) - set(NAMES))
    if unknown:
        ap.error(f"unknown experiment(s) {', '.join(unknown)}; choose from {', '.join(NAMES)}")
    return args


if __name__ == "__main__":
    args = parse_args()
    for name in args.names or NAMES:
        run(name, Path(args.out), not args.skip_oracle, not args.skip_simulate, args.verbose)
