import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from freqrbm.affine import ParameterPoint
from freqrbm.fom import make_penzl
from freqrbm.stability.eigen import (
    beta_pencil,
    block_partition,
    dense_sigma_oracle,
    hermitian_part_extremes,
    largest_sigma,
    smallest_sigma,
)


def random_complex(rng, n):
    return rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))


def test_hermitian_part_examples():
    assert hermitian_part_extremes(np.eye(3)) == pytest.approx((1.0, 1.0))
    assert hermitian_part_extremes(np.array([[0.0, 1.0], [0.0, 0.0]])) == pytest.approx((-0.5, 0.5))
    assert hermitian_part_extremes(1j * np.eye(4)) == pytest.approx((0.0, 0.0), abs=1e-15)


def test_hermitian_part_sparse_path(rng):
    n = 300
    X = sp.random(n, n, density=0.02, random_state=np.random.RandomState(3)) + sp.diags(rng.uniform(-2, 5, n))
    dense = hermitian_part_extremes(X.toarray())
    it = hermitian_part_extremes(X, dense_max=10)
    assert it == pytest.approx(dense, rel=1e-8)
    assert hermitian_part_extremes(1j * sp.identity(n), dense_max=10) == (0.0, 0.0)


def test_smallest_sigma_examples():
    s, v = smallest_sigma(np.diag([1.0, 2.0]))
    assert s == pytest.approx(1.0) and abs(abs(v[0]) - 1) < 1e-14
    M = 2j * np.eye(2) - np.diag([-1.0, -2.0])
    assert smallest_sigma(M)[0] == pytest.approx(np.sqrt(5), rel=1e-14)
    Q, _ = np.linalg.qr(random_complex(np.random.default_rng(0), 6))
    assert smallest_sigma(Q)[0] == pytest.approx(1.0, rel=1e-12)


def test_dense_oracle_examples():
    assert dense_sigma_oracle(np.diag([3.0, 7.0])) == pytest.approx(3.0)
    Q, _ = np.linalg.qr(random_complex(np.random.default_rng(1), 5))
    assert dense_sigma_oracle(Q) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dense_sigma_oracle(np.eye(5), max_n=4)


@pytest.mark.parametrize("seed", range(5))
def test_iterative_matches_dense(seed):
    rng = np.random.default_rng(seed)
    M = random_complex(rng, 50)
    it = smallest_sigma(sp.csc_matrix(M), method="iterative")[0]
    assert abs(it - dense_sigma_oracle(M)) <= 1e-8 * dense_sigma_oracle(M)


def test_singular_vector_is_minimizer(rng):
    M = random_complex(rng, 30)
    s, v = smallest_sigma(M)
    assert np.linalg.norm(v) == pytest.approx(1.0)
    assert np.linalg.norm(M @ v) == pytest.approx(s, rel=1e-12)


def test_largest_sigma(rng):
    M = random_complex(rng, 40)
    assert largest_sigma(M) == pytest.approx(np.linalg.norm(M, 2))
    assert largest_sigma(sp.csr_matrix(M), dense_max=10) == pytest.approx(np.linalg.norm(M, 2), rel=1e-6)


def test_block_partition_and_penzl_blocks():
    m = make_penzl()
    blocks = block_partition(m.M.pattern())
    assert len(blocks) == 1003
    Mp = m.M.evaluate(ParameterPoint(150.0, (3.0, -4.0, 12.0)))
    s_blk = smallest_sigma(Mp, blocks=blocks)[0]
    assert s_blk == pytest.approx(dense_sigma_oracle(Mp), rel=1e-13)
    Mb = m.M.evaluate(ParameterPoint(120.0, (0.0, 5.0, -5.0)))
    b_blk = beta_pencil(Mp, Mb, blocks=blocks)[0]
    b_dense = beta_pencil(Mp.toarray(), Mb.toarray())[0]
    assert b_blk == pytest.approx(b_dense, rel=1e-12, abs=1e-13)


def test_beta_identities(rng):
    Mb = random_complex(rng, 12) + 6 * np.eye(12)
    assert beta_pencil(Mb, Mb)[0] == pytest.approx(1.0, abs=1e-12)
    assert beta_pencil(2.5 * Mb, Mb)[0] == pytest.approx(2.5, rel=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_beta_lower_bound_property(seed):
    rng = np.random.default_rng(seed)
    Mb = random_complex(rng, 8) + 4 * np.eye(8)
    M = Mb + 0.5 * random_complex(rng, 8)
    beta, v = beta_pencil(M, Mb)
    assert beta * dense_sigma_oracle(Mb) <= dense_sigma_oracle(M) * (1 + 1e-10) + 1e-12
    # the eigenvector realizes the pencil Rayleigh quotient
    num = (np.vdot(Mb @ v, M @ v)).real
    den = np.linalg.norm(Mb @ v) ** 2
    assert num / den == pytest.approx(beta, rel=1e-8, abs=1e-10)


def test_beta_iterative_matches_dense(rng):
    Mb = random_complex(rng, 60) + 8 * np.eye(60)
    M = Mb + random_complex(rng, 60)
    d = beta_pencil(M, Mb)[0]
    it = beta_pencil(sp.csc_matrix(M), sp.csc_matrix(Mb), dense_max=10)[0]
    assert it == pytest.approx(d, rel=1e-7, abs=1e-9)


def test_beta_stalled_lanczos_falls_back_to_dense(rng, monkeypatch):
    from freqrbm.stability import eigen

    def stall(*args):
        raise eigen.EigenSolverError("stalled")

    Mb = random_complex(rng, 60) + 8 * np.eye(60)
    M = Mb + random_complex(rng, 60)
    d = beta_pencil(M, Mb)[0]
    monkeypatch.setattr(eigen, "_beta_iterative", stall)
    got = beta_pencil(sp.csc_matrix(M), sp.csc_matrix(Mb), dense_max=10)[0]
    assert got == pytest.approx(d, rel=1e-12)
    with pytest.raises(eigen.EigenSolverError):
        beta_pencil(sp.csc_matrix(M), sp.csc_matrix(Mb), dense_max=10, fallback_max=10)
