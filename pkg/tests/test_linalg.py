import numpy as np
import pytest
from hypothesis import given, settings as hyp_settings
from hypothesis import strategies as st

from mola import linalg


def random_matrix(m, n, seed, rank=None):
    rng = np.random.default_rng(seed)
    if rank is None:
        return rng.normal(size=(m, n))
    rank = min(rank, m, n)
    if rank == 0:
        return np.zeros((m, n))
    return rng.normal(size=(m, rank)) @ rng.normal(size=(rank, n))


def reconstruct(res, m, n):
    k = min(m, n)
    return (res.u[:, :k] * res.sigma) @ res.vt[:k, :]


# --- as_matrix / kernels ---


def test_as_matrix_validates():
    a = linalg.as_matrix([[1.0, 2.0], [3.0, 4.0]])
    assert a.shape == (2, 2) and a.dtype == np.float64
    with pytest.raises(ValueError):
        linalg.as_matrix([1.0, 2.0])
    with pytest.raises(ValueError):
        linalg.as_matrix([[np.nan]])
    with pytest.raises(ValueError):
        linalg.as_matrix([[np.inf, 1.0]])
    with pytest.raises(ValueError):
        linalg.as_matrix(np.zeros((0, 3)))


def test_matmul_identity():
    x = random_matrix(2, 5, seed=1)
    assert np.array_equal(linalg.matmul(np.eye(2), x), x)
    with pytest.raises(ValueError):
        linalg.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_append_bias_column_shapes():
    w = random_matrix(4, 8, seed=2)
    b = np.arange(4.0)
    wbar = linalg.append_bias_column(w, b)
    assert wbar.shape == (4, 9)
    assert np.array_equal(wbar[:, :8], w)
    assert np.array_equal(wbar[:, 8], b)
    # column-vector bias is accepted too
    assert np.array_equal(linalg.append_bias_column(w, b.reshape(4, 1)), wbar)
    with pytest.raises(ValueError):
        linalg.append_bias_column(w, np.arange(3.0))


def test_frobenius_zero():
    assert linalg.frobenius(np.zeros((3, 7))) == 0.0
    assert linalg.frobenius(np.full((2, 2), 2.0)) == pytest.approx(4.0)


# --- svd ---


def test_svd_identity():
    res = linalg.svd(np.eye(3))
    assert np.allclose(res.sigma, [1.0, 1.0, 1.0])
    assert res.rank == 3


def test_svd_zero_matrix():
    res = linalg.svd(np.zeros((2, 4)))
    assert res.sigma.shape == (2,)
    assert np.array_equal(res.sigma, [0.0, 0.0])
    assert res.rank == 0
    assert np.allclose(res.u @ res.u.T, np.eye(2), atol=1e-12)
    assert np.allclose(res.vt @ res.vt.T, np.eye(4), atol=1e-12)


def test_svd_seeded_reconstruction():
    a = random_matrix(5, 3, seed=7)
    res = linalg.svd(a)
    err = np.linalg.norm(reconstruct(res, 5, 3) - a) / np.linalg.norm(a)
    assert err <= 1e-10


def test_svd_descending_and_nonnegative():
    a = random_matrix(6, 6, seed=3)
    res = linalg.svd(a)
    assert np.all(res.sigma >= 0.0)
    assert np.all(np.diff(res.sigma) <= 0.0)


def test_svd_matches_reference_singular_values():
    for seed in range(8):
        m, n = (seed % 6) + 1, ((seed * 3) % 7) + 1
        a = random_matrix(m, n, seed=100 + seed)
        res = linalg.svd(a)
        ref = np.linalg.svd(a, compute_uv=False)
        assert np.allclose(res.sigma, ref, rtol=1e-10, atol=1e-12)


def test_svd_nonconvergence_is_explicit(monkeypatch):
    monkeypatch.setattr(linalg, "JACOBI_MAX_SWEEPS", 0)
    with pytest.raises(linalg.JacobiNonConvergence):
        linalg.svd(random_matrix(4, 4, seed=5))


@hyp_settings(max_examples=40)
@given(
    m=st.integers(1, 32),
    n=st.integers(1, 32),
    seed=st.integers(0, 2**31),
    deficient=st.booleans(),
)
def test_svd_properties(m, n, seed, deficient):
    rank = max(1, min(m, n) // 2) if deficient else None
    a = random_matrix(m, n, seed, rank=rank)
    res = linalg.svd(a)
    scale = max(np.linalg.norm(a), 1e-30)
    assert np.linalg.norm(reconstruct(res, m, n) - a) / scale <= 1e-10
    assert np.linalg.norm(res.u.T @ res.u - np.eye(m)) <= 1e-10 * m
    assert np.linalg.norm(res.vt @ res.vt.T - np.eye(n)) <= 1e-10 * n
    assert res.rank <= min(m, n)
    if deficient:
        assert res.rank <= max(1, min(m, n) // 2)


# --- least squares ---


def test_least_squares_identity_system():
    x = linalg.least_squares(np.eye(2), np.array([[3.0], [4.0]]))
    assert np.allclose(x, [[3.0], [4.0]])


def test_least_squares_averaging_case():
    x = linalg.least_squares(np.array([[1.0], [1.0]]), np.array([[0.0], [2.0]]))
    assert np.allclose(x, [[1.0]])


def test_least_squares_exact_recovery():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(6, 3))
    x0 = rng.normal(size=(3, 2))
    y = a @ x0
    x = linalg.least_squares(a, y)
    assert np.linalg.norm(y - a @ x) <= 1e-10


def test_least_squares_dimension_mismatch():
    with pytest.raises(ValueError):
        linalg.least_squares(np.zeros((3, 2)), np.zeros((4, 1)))


def test_least_squares_min_norm_vs_alternative():
    # duplicated column: solutions form a line, lstsq-style min-norm is unique
    a = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([[2.0], [4.0], [6.0]])
    x = linalg.least_squares(a, y)
    alt = np.array([[2.0], [0.0]])  # also solves exactly
    assert np.linalg.norm(y - a @ alt) <= 1e-12
    assert np.linalg.norm(x) < np.linalg.norm(alt)
    assert np.allclose(x, [[1.0], [1.0]])


@hyp_settings(max_examples=40)
@given(
    m=st.integers(1, 16),
    n=st.integers(1, 16),
    d=st.integers(1, 4),
    seed=st.integers(0, 2**31),
    deficient=st.booleans(),
)
def test_least_squares_properties(m, n, d, seed, deficient):
    rank = max(1, min(m, n) // 2) if deficient else None
    a = random_matrix(m, n, seed, rank=rank)
    y = random_matrix(m, d, seed + 1)
    x = linalg.least_squares(a, y)
    resid = y - a @ x
    # residual orthogonal to the column space
    assert np.linalg.norm(a.T @ resid) <= 1e-8 * max(
        np.linalg.norm(a) * np.linalg.norm(y), 1e-12
    )
    # agrees with the reference min-norm solution
    ref = np.linalg.lstsq(a, y, rcond=None)[0]
    scale = max(np.linalg.norm(ref), 1.0)
    assert np.linalg.norm(x - ref) <= 1e-8 * scale
