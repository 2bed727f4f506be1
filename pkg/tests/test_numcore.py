import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ocslab.errors import ConvergenceError, NumericError
from ocslab.numcore import (
    finite_diff_grad,
    logsumexp,
    make_rng,
    operator_norm,
    pairwise_sum,
    spearman,
    stable_rank,
    substream,
    top_right_singular,
)
from oracles import jacobi_svd, logsumexp_mp

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def test_rng_same_seed_same_bytes():
    a = make_rng(42).random(64).tobytes()
    b = make_rng(42).random(64).tobytes()
    assert a == b


def test_rng_unequal_seeds_differ_early():
    for seed in range(100):
        assert not np.array_equal(make_rng(seed).random(16), make_rng(seed + 1).random(16))


def test_rng_rejects_bad_seed():
    with pytest.raises(ValueError):
        make_rng(-1)
    with pytest.raises(ValueError):
        make_rng(2**64)


def test_substreams_are_distinct_and_reproducible():
    draws = [substream(7, i).random(4) for i in range(50)]
    assert len({d.tobytes() for d in draws}) == 50
    assert np.array_equal(substream(7, 13).random(4), draws[13])


def test_identity_top_singular():
    basis, s = top_right_singular(np.eye(2), 1)
    assert s[0] == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(basis[:, 0]) == pytest.approx(1.0, abs=1e-12)


def test_diagonal_top_singular():
    basis, s = top_right_singular(np.diag([3.0, 1.0]), 1)
    assert s[0] == pytest.approx(3.0, abs=1e-10)
    assert abs(basis[0, 0]) == pytest.approx(1.0, abs=1e-10)


def test_random_5x4_against_jacobi():
    m = make_rng(3).standard_normal((5, 4))
    _, s = top_right_singular(m, 2)
    _, ref, _ = jacobi_svd(m)
    assert np.allclose(s, ref[:2], atol=1e-8, rtol=0)


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(2, 10), cols=st.integers(2, 10), seed=st.integers(0, 10_000), data=st.data())
def test_sigmas_match_jacobi(rows, cols, seed, data):
    m = make_rng(seed).standard_normal((rows, cols))
    k = data.draw(st.integers(1, min(rows, cols)))
    basis, s = top_right_singular(m, k)
    _, ref, _ = jacobi_svd(m)
    assert np.all(np.abs(s - ref[:k]) <= 1e-6 * ref[:k] + 1e-12)
    assert np.allclose(basis.T @ basis, np.eye(k), atol=1e-9)
    assert np.all(np.diff(s) <= 1e-12)
    # each pair: ||M v|| = sigma within tol * sigma_max
    assert np.allclose(np.linalg.norm(m @ basis, axis=0), s, atol=1e-10 * s[0])


def test_clustered_spectrum_converges():
    rng = make_rng(1)
    q1, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    q2, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    sig = np.array([5.0, 5.0 - 1e-9, 5.0 - 2e-9, 1, 0.5, 0.2, 0.1, 0.0])
    _, s = top_right_singular(q1 @ np.diag(sig) @ q2.T, 3)
    assert np.allclose(s, sig[:3], atol=1e-8)


def test_iteration_limit_raises():
    m = make_rng(0).standard_normal((30, 30))
    with pytest.raises(ConvergenceError):
        top_right_singular(m, 5, tol=1e-14, max_iter=1)


def test_top_singular_argument_errors():
    with pytest.raises(ValueError):
        top_right_singular(np.eye(3), 4)
    with pytest.raises(ValueError):
        top_right_singular(np.eye(3), 0)
    with pytest.raises(ValueError):
        top_right_singular(np.eye(3), 1, tol=0)
    with pytest.raises(NumericError):
        top_right_singular(np.array([[np.nan, 1.0]]), 1)


def test_zero_matrix_has_zero_sigmas():
    _, s = top_right_singular(np.zeros((3, 4)), 2)
    assert np.all(s == 0)


def test_logsumexp_examples():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
    assert logsumexp([1e6, 0.0]) == 1e6
    with pytest.raises(ValueError):
        logsumexp([])
    with pytest.raises(NumericError):
        logsumexp([np.inf])


@given(arrays(np.float64, 10, elements=finite))
def test_logsumexp_matches_extended_precision(v):
    assert logsumexp(v) == pytest.approx(logsumexp_mp(v), abs=1e-12, rel=1e-14)


@given(arrays(np.float64, st.integers(1, 20), elements=finite), finite)
def test_logsumexp_shift_invariance(v, c):
    assert logsumexp(v + c) == pytest.approx(logsumexp(v) + c, abs=1e-12)


def test_finite_diff_examples():
    g = finite_diff_grad(lambda x: float(x[0] ** 2), [3.0], h=1e-5)
    assert g[0] == pytest.approx(6.0, abs=1e-6)
    assert np.all(finite_diff_grad(lambda x: 4.0, np.ones(5)) == 0)
    a = make_rng(2).standard_normal((6, 6))
    a = a + a.T
    x = make_rng(3).standard_normal(6)
    g = finite_diff_grad(lambda v: 0.5 * v @ a @ v, x)
    assert np.allclose(g, a @ x, rtol=1e-5, atol=1e-8)


def test_finite_diff_errors():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, [1.0], h=0)

    def f(x):
        return math.inf if x[2] > 1.0 else 0.0

    with pytest.raises(NumericError) as info:
        finite_diff_grad(f, [1.0, 1.0, 1.0])
    assert info.value.index == 2


def test_stable_rank_and_operator_norm():
    assert stable_rank(np.diag([2.0, 0.0, 0.0])) == pytest.approx(1.0, abs=1e-9)
    assert stable_rank(np.eye(4)) == pytest.approx(4.0, abs=1e-9)
    m = make_rng(5).standard_normal((6, 4))
    assert operator_norm(m) == pytest.approx(np.linalg.norm(m, 2), rel=1e-10)
    with pytest.raises(NumericError):
        stable_rank(np.zeros((2, 2)))


def test_spearman():
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 1, 1], [1, 2, 3]) == 0.0
    with pytest.raises(ValueError):
        spearman([1], [1])


@given(arrays(np.float64, st.integers(0, 50), elements=finite))
def test_pairwise_sum(v):
    assert pairwise_sum(v) == pytest.approx(math.fsum(v), abs=1e-9)
