"""Full-scale runs at n = 100^2; skipped unless FREQRBM_FULLSCALE=1 (hours on one core)."""

from dataclasses import replace

import numpy as np
import pytest

from freqrbm.config import bundled_config
from freqrbm.fom import solve_grid
from freqrbm.rbm import run_greedy
from freqrbm.realify import project_time_domain, realify
from freqrbm.stability.model import TrainedNNSCM, TrainedSCM
from freqrbm.stability.nnscm import nnscm_train
from freqrbm.stability.scm import scm_train
from freqrbm.verify import bode_error

pytestmark = [pytest.mark.fullscale, pytest.mark.slow]


def test_symmetric_decay_and_dominance():
    cfg = replace(bundled_config("symmetric"), grid_n=100)
    model = cfg.build_model()
    s = cfg.stability
    stab = TrainedSCM(model.M, scm_train(model.M, cfg.stability_grid(), eps=s.eps, M_alpha=s.M_alpha).state)
    grid = cfg.greedy_grid()
    sub = np.arange(0, len(grid), 10)
    W = solve_grid(model, grid.subset(sub))
    gaps = []

    def dominance(rb, delta):
        err = np.linalg.norm(W - rb.reconstruct(rb.reduced_solve(grid.subset(sub))), axis=0)
        gaps.append(np.min(delta[sub] - err))

    _, trace = run_greedy(model, grid, stab, max_r0=12, truth_index=sub, callback=dominance)
    err = trace.max_true_errors
    assert min(gaps) >= -1e-10 * np.abs(W).max()
    assert np.polyfit(np.arange(len(err)), np.log(err), 1)[0] < 0


def test_vanishing_bode():
    cfg = replace(bundled_config("vanishing"), grid_n=100)
    model = cfg.build_model()
    s = cfg.stability
    tr = nnscm_train(model.M, cfg.stability_grid(), s.edges.edges(), eps=s.eps, eps_beta=s.eps_beta,
                     M_alpha=s.M_alpha, inside=s.inside, phi=s.phi)
    stab = TrainedNNSCM(model.M, tr.states, tr.frequency_edges)
    rb, _ = run_greedy(model, cfg.greedy_grid(), stab, max_r0=10)
    rom = project_time_domain(model, realify(rb.Phi, cfg.tau))
    assert bode_error(model, rom, cfg.bode_grid()).max_rel_err <= 0.1
