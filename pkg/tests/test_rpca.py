import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from delayspace.errors import InvalidInputError
from delayspace.rpca import (SolverOptions, decompose, numerical_rank, singular_value_threshold,
                             soft_threshold)


def planted(seed, n=200, rank=10, frac=0.05, mag=10.0):
    rng = np.random.default_rng(seed)
    L0 = rng.standard_normal((n, rank)) @ rng.standard_normal((rank, n))
    S0 = np.zeros((n, n))
    idx = rng.choice(n * n, int(frac * n * n), replace=False)
    S0.flat[idx] = rng.choice([-mag, mag], idx.size)
    return L0, S0


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ---------------------------------------------------------------- soft threshold

def test_soft_threshold_example():
    out = soft_threshold(np.array([[5.0, -0.5], [0.0, 2.0]]), 1.0)
    np.testing.assert_array_equal(out, [[4.0, 0.0], [0.0, 1.0]])


def test_soft_threshold_full_shrinkage():
    M = np.random.default_rng(0).normal(size=(4, 5))
    assert not soft_threshold(M, np.abs(M).max() + 1e-9).any()


def test_soft_threshold_matches_entrywise_formula():
    M = np.random.default_rng(8).normal(size=(8, 8))
    tau = 0.3
    expect = np.empty_like(M)
    for i in range(8):
        for j in range(8):
            x = M[i, j]
            expect[i, j] = (1 if x > 0 else -1 if x < 0 else 0) * max(abs(x) - tau, 0.0)
    np.testing.assert_allclose(soft_threshold(M, tau), expect, rtol=0, atol=1e-15)


def test_soft_threshold_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        soft_threshold(np.array([[np.nan]]), 1.0)
    with pytest.raises(InvalidInputError):
        soft_threshold(np.ones((2, 2)), 0.0)


@given(arrays(np.float64, (5, 4), elements=st.floats(-100, 100)), st.floats(1e-3, 50))
def test_soft_threshold_contracts(M, tau):
    assert np.all(np.abs(soft_threshold(M, tau)) <= np.abs(M))


# ---------------------------------------------------------------- SVT

def test_svt_diagonal():
    out, count = singular_value_threshold(np.diag([5.0, 2.0, 0.1]), 1.0)
    np.testing.assert_allclose(out, np.diag([4.0, 1.0, 0.0]), atol=1e-12)
    assert count == 2


def test_svt_zero():
    out, count = singular_value_threshold(np.zeros((3, 4)), 1.0)
    assert count == 0 and not out.any()


def test_svt_nuclear_norm_against_independent_svd():
    M = np.random.default_rng(10).normal(size=(10, 6))
    s = scipy.linalg.svd(M, compute_uv=False, lapack_driver="gesvd")
    expect = np.maximum(s - 0.5, 0).sum()
    out, count = singular_value_threshold(M, 0.5)
    got = scipy.linalg.svd(out, compute_uv=False, lapack_driver="gesvd").sum()
    assert got == pytest.approx(expect, rel=1e-12)
    assert count == int((s > 0.5).sum())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 5), elements=st.floats(-50, 50)), st.floats(1e-2, 20))
def test_svt_never_grows_singular_values_or_rank(M, tau):
    out, _ = singular_value_threshold(M, tau)
    s_in = np.linalg.svd(M, compute_uv=False)
    s_out = np.linalg.svd(out, compute_uv=False)
    assert np.all(s_out <= s_in + 1e-9 * max(1.0, s_in[0]))
    assert numerical_rank(out, 1e-6) <= numerical_rank(M, 1e-6)


# ---------------------------------------------------------------- numerical rank

def test_numerical_rank_examples():
    assert numerical_rank(np.diag([10.0, 5.0, 1e-9]), 1e-6) == 2
    assert numerical_rank(np.zeros((4, 7))) == 0
    rng = np.random.default_rng(3)
    assert numerical_rank(rng.normal(size=(50, 3)) @ rng.normal(size=(3, 40))) == 3


# ---------------------------------------------------------------- options

@pytest.mark.parametrize("kw", [dict(tolerance=0), dict(max_iterations=0), dict(mu_growth=1.0),
                                dict(lam=-1), dict(rank_tolerance=0), dict(lam_scale=0)])
def test_options_validation(kw):
    with pytest.raises(InvalidInputError):
        SolverOptions(**kw)


# ---------------------------------------------------------------- decompose

def test_decompose_zero_matrix():
    D = decompose(np.zeros((3, 5)))
    assert D.rank_L == 0 and D.converged
    assert not D.L.any() and not D.S.any()


def test_decompose_exact_rank_one():
    rng = np.random.default_rng(1)
    X = np.outer(rng.uniform(1, 5, 30), rng.uniform(1, 5, 20))
    D = decompose(X)
    assert rel(D.L, X) <= 1e-6
    assert np.abs(D.S).max() <= 1e-6 * np.abs(X).max()
    assert D.rank_L == 1


def test_decompose_degenerate_shapes():
    row = np.array([[3.0, 4.0, 5.0]])
    D = decompose(row)
    assert D.rank_L in (0, 1) and D.L.shape == (1, 3)
    assert decompose(row.T).rank_L in (0, 1)


def test_decompose_rejects_empty_and_nonfinite():
    with pytest.raises(InvalidInputError):
        decompose(np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        decompose(np.array([[1.0, np.inf]]))


def test_decompose_planted_rank5():
    rng = np.random.default_rng(5)
    L0 = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 200))
    S0 = np.zeros((200, 200))
    idx = rng.choice(200 * 200, 2000, replace=False)
    S0.flat[idx] = rng.choice([-10.0, 10.0], idx.size)
    D = decompose(L0 + S0)
    assert D.converged
    assert rel(D.L, L0) <= 1e-4
    assert D.rank_L == 5


def test_decompose_is_deterministic():
    L0, S0 = planted(2, n=60, rank=4)
    a = decompose(L0 + S0)
    b = decompose(L0 + S0)
    np.testing.assert_array_equal(a.L, b.L)
    np.testing.assert_array_equal(a.S, b.S)
    assert a.residual_history == b.residual_history


def test_nonconvergence_is_reported_not_raised():
    L0, S0 = planted(4, n=60, rank=4)
    D = decompose(L0 + S0, SolverOptions(max_iterations=3))
    assert not D.converged and D.iterations == 3
    assert D.residual > 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_residual_monotone_after_five_iterations(seed):
    L0, S0 = planted(seed)
    h = np.array(decompose(L0 + S0).residual_history)
    assert np.all(np.diff(h[5:]) <= 0)


@pytest.mark.parametrize("c", [0.01, 3.0, 250.0])
def test_scale_equivariance(c):
    L0, S0 = planted(7, n=80, rank=4)
    X = L0 + S0
    opts = SolverOptions()
    D = decompose(X, opts)
    Dc = decompose(c * X, opts)
    bound = 10 * opts.tolerance * np.linalg.norm(c * X)
    assert np.linalg.norm(Dc.L - c * D.L) <= bound
    assert np.linalg.norm(Dc.S - c * D.S) <= bound


def test_permutation_equivariance():
    L0, S0 = planted(8, n=80, rank=4)
    X = L0 + S0
    rng = np.random.default_rng(0)
    p, q = rng.permutation(80), rng.permutation(80)
    D = decompose(X)
    Dp = decompose(X[p][:, q])
    bound = 10 * SolverOptions().tolerance * np.linalg.norm(X)
    assert np.linalg.norm(Dp.L - D.L[p][:, q]) <= bound
    assert np.linalg.norm(Dp.S - D.S[p][:, q]) <= bound


def test_reconstruction_within_tolerance():
    L0, S0 = planted(9, n=80, rank=4)
    X = L0 + S0
    D = decompose(X)
    assert np.linalg.norm(X - D.L - D.S) / np.linalg.norm(X) <= D.residual <= 1e-7
