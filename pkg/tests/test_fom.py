import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given
from hypothesis import strategies as st

from freqrbm.affine import AffineMatrix, AffineVector, ParameterGrid, ParameterPoint, constant, tensor_grid
from freqrbm.fom import (
    ParametricLTI,
    SolveError,
    make_diagonal,
    make_fractional_heat,
    make_heat_symmetric,
    make_model,
    make_penzl,
    make_vanishing_diffusion,
    point_shift,
    solve_frequency,
    transfer_function,
)


def test_diag_solve(diag12):
    sol = solve_frequency(diag12, ParameterPoint(0.0))
    assert np.allclose(sol.w, [1.0, 0.5], rtol=0, atol=1e-15)
    assert sol.H == pytest.approx(1.5, abs=1e-15)
    assert np.allclose(transfer_function(diag12, ParameterGrid([0.0])), [1.5])


def test_scalar_solve():
    m = make_diagonal([-1.0])
    assert solve_frequency(m, ParameterPoint(1.0)).w[0] == pytest.approx(0.5 - 0.5j, abs=1e-15)


def test_constant_model_transfer(diag12):
    m = make_diagonal([-1.0, -2.0])
    A = AffineMatrix([(constant(1.0), sp.csc_matrix((2, 2)))])
    const = ParametricLTI("const", A, m.b, m.c, [], M=AffineMatrix([(constant(1.0), sp.identity(2))]),
                          time_domain=False, shift=lambda w, p: np.ones_like(w))
    H = transfer_function(const, ParameterGrid([0.0, 1.0, 2.0]))
    assert np.allclose(H, 2.0) and np.ptp(H) == 0


def test_singular_system_reports_point():
    m = make_diagonal([0.0, -1.0])
    with pytest.raises(SolveError) as exc:
        transfer_function(m, ParameterGrid([1.0, 0.0]))
    assert exc.value.index == 1 and exc.value.point == ParameterPoint(0.0)


def test_penzl_structure():
    m = make_penzl()
    assert m.n == 1006
    A = m.A.evaluate(ParameterPoint(0.0, (0.0, 0.0, 0.0))).toarray().real
    assert np.array_equal(A[:2, :2], [[-1, 100], [-100, -1]])
    assert np.array_equal(A[2:4, 2:4], [[-1, 200], [-200, -1]])
    assert np.array_equal(A[4:6, 4:6], [[-1, 400], [-400, -1]])
    assert np.array_equal(np.diag(A)[6:], -np.arange(1.0, 1001.0))
    A1 = m.A.evaluate(ParameterPoint(0.0, (5.0, 0.0, 0.0))).toarray().real
    assert A1[0, 1] == 105.0 and A1[1, 0] == -105.0
    b = m.b.evaluate(ParameterPoint(0.0, (0.0, 0.0, 0.0))).real
    assert np.array_equal(b[:6], np.full(6, 10.0)) and np.array_equal(b[6:], np.ones(1000))
    assert np.array_equal(m.c.as_matrix(), m.b.as_matrix())


def test_penzl_resonance():
    m = make_penzl()
    H = transfer_function(m, ParameterGrid([50.0, 100.0], [[0, 0, 0], [0, 0, 0]]))
    assert abs(H[1]) > abs(H[0])


def test_symmetric_model_terms():
    m = make_heat_symmetric(10)
    assert m.n == 100 and m.A.Q == 3
    A = m.A.evaluate(ParameterPoint(0.0, (1.0, 0.0))).toarray().real
    assert np.array_equal(A, A.T)
    assert np.linalg.eigvalsh(A).max() < 0
    assert m.norm_scale == pytest.approx(0.4)


def test_symmetric_forcing_and_output():
    m = make_heat_symmetric(9)
    b = m.b.as_matrix()[:, 0].real
    h = 2.0 / 10
    nodes = -1 + h * np.arange(1, 10)
    X, Y = np.meshgrid(nodes, nodes)
    assert np.array_equal(b, (X.ravel() ** 2 + Y.ravel() ** 2 > 0.25).astype(float))
    assert np.allclose(m.c.as_matrix()[:, 0], 1 / 81)


def test_laplacian_eigenvalue_convergence():
    m = make_heat_symmetric(64)
    A = m.A.evaluate(ParameterPoint(0.0, (1.0, 0.0)))
    A = sp.csc_matrix((A.data.real.copy(), A.indices, A.indptr), shape=A.shape)
    lam = -spla.eigsh(A, k=1, sigma=0, which="LM", return_eigenvectors=False)[0]
    assert abs(lam - np.pi**2 / 2) / (np.pi**2 / 2) < 0.02


def test_vanishing_terms():
    m = make_vanishing_diffusion(8)
    assert m.A.Q == 4 and m.param_box == [(-0.99, 0.99)] * 2
    lap = make_heat_symmetric(8).A.evaluate(ParameterPoint(0.0, (1.0, 0.0)))
    assert np.allclose(m.A.evaluate(ParameterPoint(0.0, (0.0, 0.0))).toarray(), lap.toarray())


def test_fractional_coefficients_examples():
    m = make_fractional_heat(6)
    th = m.M.coefficients(ParameterPoint(3.0, (1.0,)))
    assert np.allclose(th, [0.0, 3.0, 1.0], atol=1e-15)
    z = point_shift(m, ParameterPoint(1.0, (0.5,)))
    assert z == pytest.approx(np.sqrt(2) / 2 * (1 + 1j), abs=1e-15)


@given(st.floats(-1e3, 1e3), st.floats(0.05, 1.0))
def test_fractional_affine_reconstruction(omega, alpha):
    m = make_fractional_heat(4)
    th = m.M.coefficients(ParameterPoint(omega, (alpha,)))
    z = (1j * omega) ** alpha if omega != 0 else 0.0
    assert abs(th[0] + 1j * th[1] - z) <= 1e-12 * max(1.0, abs(z))


def test_models_by_name():
    assert make_model("heat_symmetric", 5).n == 25
    assert make_model("penzl").n == 1006
    with pytest.raises(ValueError, match="unknown model"):
        make_model("nope")


@pytest.mark.parametrize("name", ["heat_symmetric", "vanishing_diffusion", "fractional_heat"])
def test_real_coefficients(name):
    m = make_model(name, 6)
    lo = [a for a, _ in m.param_box]
    hi = [b for _, b in m.param_box]
    g = tensor_grid(np.logspace(-2, 3, 7), [np.linspace(a, b, 3) for a, b in zip(lo, hi)])
    assert m.M.coefficients(g).dtype == float


@pytest.mark.parametrize("maker,p", [(lambda: make_heat_symmetric(8), (1.3, 0.7)),
                                     (lambda: make_vanishing_diffusion(8), (0.5, -0.9)),
                                     (make_penzl, (3.0, -7.0, 11.0))])
def test_conjugate_symmetry(maker, p):
    m = maker()
    H = transfer_function(m, ParameterGrid([-7.5, 7.5], [p, p]))
    assert abs(H[0] - np.conj(H[1])) <= 1e-12 * abs(H[1])


@given(st.floats(1e-2, 1e3), st.floats(0.1, 4.0), st.floats(0.0, 2.0))
def test_solve_residual(omega, p1, p2):
    m = make_heat_symmetric(8)
    P = ParameterPoint(omega, (p1, p2))
    w = solve_frequency(m, P).w
    b = m.b.evaluate(P)
    assert np.linalg.norm(m.M.evaluate(P) @ w - b) <= 1e-10 * np.linalg.norm(b)


def test_out_of_box_rejected(heat_small):
    with pytest.raises(ValueError, match="outside"):
        solve_frequency(heat_small, ParameterPoint(1.0, (5.0, 0.0)))
