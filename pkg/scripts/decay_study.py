"""Truth-error decay of the weak greedy on the symmetric heat model.

Usage::

    python3 scripts/decay_study.py --grid-n 32 --max-r0 15
    python3 scripts/decay_study.py --grid-n 100 --stability exact --csv decay.csv

Trains the stability model (SCM with the bundled settings, or exact
``sigma_min``), runs the greedy with the truth error tracked on a random
subsample, and prints the scaled estimator and true error per basis size
together with the log-linear decay rate.
"""

from __future__ import annotations

import argparse
import logging
import time

import numpy as np

from freqrbm.config import bundled_config
from freqrbm.fom import make_heat_symmetric
from freqrbm.rbm import run_greedy
from freqrbm.stability.model import ExactOracle, TrainedSCM
from freqrbm.stability.scm import scm_train


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid-n", type=int, default=32)
    ap.add_argument("--max-r0", type=int, default=10)
    ap.add_argument("--samples", type=int, default=200, help="truth-error subsample size")
    ap.add_argument("--stability", choices=["scm", "exact"], default="scm")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", help="write the table to this file")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap.parse_args(argv)


def main(argv=None) -> None:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = bundled_config("symmetric")
    model = make_heat_symmetric(args.grid_n)
    grid = cfg.greedy_grid()
    t0 = time.perf_counter()
    if args.stability == "scm":
        tr = scm_train(model.M, cfg.stability_grid(), eps=cfg.stability.eps, M_alpha=cfg.stability.M_alpha)
        stab = TrainedSCM(model.M, tr.state)
        print(f"SCM: {tr.state.k} points, max gap {tr.gap.max():.3f}, {time.perf_counter() - t0:.0f} s")
    else:
        stab = ExactOracle(model.M)
    rng = np.random.default_rng(args.seed)
    truth = np.sort(rng.choice(len(grid), size=min(args.samples, len(grid)), replace=False))
    t0 = time.perf_counter()
    rb, trace = run_greedy(model, grid, stab, max_r0=args.max_r0, truth_index=truth)
    print(f"greedy: r0={rb.r0}, {time.perf_counter() - t0:.0f} s")
    est = trace.max_estimators * model.norm_scale
    err = trace.max_true_errors * model.norm_scale
    r0 = np.array([r.iteration for r in trace.records])
    print(f"{'r0':>4} {'max estimator':>14} {'max true error':>15} {'effectivity':>12}")
    for k, e, t in zip(r0, est, err):
        print(f"{k:4d} {e:14.4e} {t:15.4e} {e / t:12.2f}")
    slope = np.polyfit(r0, np.log(err), 1)[0]
    print(f"true error ratio r0={r0[-1]} / r0=0: {err[-1] / err[0]:.3e}; log-linear rate {slope:.3f} per basis vector")
    if args.csv:
        np.savetxt(args.csv, np.column_stack([r0, est, err]), delimiter=",", fmt="%.17g",
                   header="r0,max_estimator_scaled,max_true_error_scaled", comments="")


if __name__ == "__main__":
    main()
