import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from freqrbm.affine import AffineMatrix, ParameterGrid, ParameterPoint, parameter, tensor_grid
from freqrbm.stability.eigen import dense_sigma_oracle
from freqrbm.stability.scm import (
    NeighborhoodLP,
    SCMState,
    lower_squared,
    pair_coefficients,
    rayleigh_bounds,
    relative_gap,
    scm_lower,
    scm_train,
    scm_upper,
)
from freqrbm.verify import sigma_oracle


@pytest.fixture(scope="module")
def small_grid():
    return tensor_grid(np.logspace(-2, 3, 8), [np.linspace(0.1, 4, 5), np.linspace(0, 2, 4)])


@pytest.fixture(scope="module")
def trained(heat_small, small_grid):
    return scm_train(heat_small.M, small_grid, eps=0.8)


def single_term():
    M1 = sp.csc_matrix(np.array([[2.0, 1.0], [0.0, 3.0]]))
    return AffineMatrix([(parameter(0, 1.0, 1.0), M1)]), dense_sigma_oracle(M1.toarray())


def test_single_term_exact():
    M, s1 = single_term()
    grid = ParameterGrid(np.zeros(5), np.linspace(0.0, 4.0, 5).reshape(-1, 1))
    tr = scm_train(M, grid, eps=1e-12)
    assert tr.state.k == 1
    exact = (1 + grid.p[:, 0]) * s1
    assert np.allclose(tr.upper, exact, rtol=1e-10)
    assert np.allclose(tr.lower, exact, rtol=1e-10)
    assert np.allclose(tr.gap, 0.0, atol=1e-10)


def test_eps_one_needs_no_iterations(heat_small, small_grid):
    tr = scm_train(heat_small.M, small_grid, eps=1.0)
    assert tr.state.k == 0


def test_rayleigh_vectors_reproduce_sigma(heat_small, trained):
    st_ = trained.state
    pc = pair_coefficients(heat_small.M.coefficients(ParameterGrid.from_points(st_.points)))
    J = np.einsum("ij,ij->i", pc, st_.y)
    assert np.allclose(J, st_.sigmas**2, rtol=1e-8)
    assert np.all(st_.lam_min <= st_.lam_max)


def test_upper_exact_at_stored_points(heat_small, trained):
    for P, s in zip(trained.state.points, trained.state.sigmas):
        assert scm_upper(trained.state, heat_small.M, P) == pytest.approx(s, rel=1e-8)


def test_sandwich_and_gap(heat_small, small_grid, trained):
    sig = sigma_oracle(heat_small, small_grid)
    assert np.all(trained.lower <= sig * (1 + 1e-8))
    assert np.all(trained.upper >= sig * (1 - 1e-8))
    assert trained.gap.max() <= 0.8
    assert np.all(trained.gap >= -1e-10)  # roundoff where LB and UB coincide
    # query path agrees with training bookkeeping
    again = scm_lower(trained.state, heat_small.M, small_grid, squared=True)
    assert np.allclose(np.sqrt(np.maximum(again, 0)), trained.lower, rtol=1e-9, atol=1e-9 * trained.lower.max())


@settings(max_examples=15)
@given(st.floats(1e-2, 1e3), st.floats(0.1, 4.0), st.floats(0.0, 2.0))
def test_sandwich_off_grid(heat_small, trained, omega, p1, p2):
    P = ParameterPoint(omega, (p1, p2))
    s = dense_sigma_oracle(heat_small.M.evaluate(P))
    assert scm_lower(trained.state, heat_small.M, P) <= s * (1 + 1e-8)
    assert scm_upper(trained.state, heat_small.M, P) >= s * (1 - 1e-8)


def test_empty_state_lower_is_box_minimum(heat_small, small_grid):
    lo, hi = rayleigh_bounds(heat_small.M)
    nq = len(lo)
    empty = SCMState(np.zeros((0, 3)), np.zeros(0), np.zeros((0, nq)), np.zeros((0, nq)), lo, hi)
    pc = pair_coefficients(heat_small.M.coefficients(small_grid))
    got = lower_squared(empty, pc, small_grid.coords())
    assert np.allclose(got, np.minimum(pc * lo, pc * hi).sum(axis=1), rtol=1e-12)


@pytest.mark.parametrize("M_alpha", [None, 3])
def test_incremental_bounds_match_fresh_solves(heat_small, small_grid, trained, M_alpha):
    st_ = trained.state
    pc = pair_coefficients(heat_small.M.coefficients(small_grid))
    coords = small_grid.coords()
    lp = NeighborhoodLP(pc, coords, st_.lam_min, st_.lam_max, M_alpha)
    prev = lp.values.copy()
    for j in range(st_.k):
        lp.add(st_.coords[j], st_.rows[j], st_.sigmas[j] ** 2)
        part = SCMState(st_.coords[: j + 1], st_.sigmas[: j + 1], st_.y[: j + 1], st_.rows[: j + 1],
                        st_.lam_min, st_.lam_max, M_alpha)
        fresh = lower_squared(part, pc, coords)
        assert np.allclose(lp.values, fresh, rtol=1e-10, atol=1e-10 * np.abs(fresh).max())
        if M_alpha is None:
            # monotone certification: constraints only accumulate
            assert np.all(lp.values >= prev - 1e-10 * np.abs(prev).max())
        prev = lp.values.copy()


def test_relative_gap_definition():
    g = relative_gap(np.array([np.inf, 4.0, 0.0, 4.0]), np.array([0.0, 1.0, 0.0, -4.0]))
    assert np.allclose(g, [1.0, 0.75, 0.0, 2.0])
