import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hpn import _kernels
from hpn.numerics import (
    ShapeError, child_rng, cosine, cosine_grad, finite_diff_check, make_rng, matvec,
    sgd_step, softmax_xent, sym_eig_min, sym_eigvals,
)

finite = st.floats(-10, 10, allow_nan=False)


def test_matvec_examples():
    assert np.array_equal(matvec(np.eye(2), [1, 2]), [1, 2])
    assert np.array_equal(matvec([[0, 1], [1, 0]], [1, 2]), [2, 1])
    assert np.array_equal(matvec(np.zeros((3, 2)), [1, 2]), np.zeros(3))
    with pytest.raises(ShapeError):
        matvec(np.eye(2), [1, 2, 3])


def test_cosine_examples():
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([3, 4], [4, 3]) == pytest.approx(0.96, abs=1e-15)
    assert cosine([0, 0], [1, 2]) == 0.0


@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite), st.floats(0.01, 100))
def test_cosine_symmetric_scale_invariant(a, b, lam):
    assert cosine(a, b) == pytest.approx(cosine(b, a), abs=1e-12)
    if np.linalg.norm(a) > 1e-6:
        assert cosine(lam * a, b) == pytest.approx(cosine(a, b), abs=1e-12)
    assert -1.0 <= cosine(a, b) <= 1.0


def test_cosine_grad_matches_differences():
    rng = make_rng(3)
    a, b = rng.normal(size=5), rng.normal(size=5)
    _, ga, gb = cosine_grad(a, b)
    assert finite_diff_check(lambda t: cosine(t, b), a, ga) < 1e-7
    assert finite_diff_check(lambda t: cosine(a, t), b, gb) < 1e-7


def test_softmax_xent_examples():
    loss, grad = softmax_xent(np.array([0.0, 0.0]), 0)
    assert loss == pytest.approx(math.log(2), abs=1e-12)
    assert np.allclose(grad, [-0.5, 0.5])
    loss, _ = softmax_xent(np.array([10.0, -10.0]), 0)
    assert loss == pytest.approx(2.0611536e-9, rel=1e-6)
    loss, _ = softmax_xent(np.zeros(3), 2)
    assert loss == pytest.approx(math.log(3), abs=1e-12)
    with pytest.raises(IndexError):
        softmax_xent(np.zeros(2), 2)


@given(arrays(np.float64, st.integers(2, 6), elements=st.floats(-50, 50)), st.data())
def test_softmax_grad_sums_to_zero(logits, data):
    label = data.draw(st.integers(0, logits.size - 1))
    loss, grad = softmax_xent(logits, label)
    assert abs(grad.sum()) < 1e-12
    assert loss >= 0


def test_sgd_step_examples():
    p = np.array([1.0])
    assert np.allclose(sgd_step(p, np.array([1.0]), 0.1), [0.9])
    p = np.array([1.0, 2.0])
    assert np.array_equal(sgd_step(p, np.zeros(2), 0.3), [1.0, 2.0])
    assert np.array_equal(sgd_step(p, np.array([2.0, -2.0]), 0.5), [0.0, 3.0])
    with pytest.raises(ShapeError):
        sgd_step(p, np.zeros(3), 0.1)
    with pytest.raises(ValueError):
        sgd_step(p, np.zeros(2), 0.0)


def test_sym_eig_min_examples():
    assert sym_eig_min(np.diag([2.0, 3.0])) == pytest.approx(2.0, abs=1e-12)
    assert sym_eig_min(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0, abs=1e-12)
    assert sym_eig_min(np.eye(3)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        sym_eig_min(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**31))
def test_sym_eig_min_rotated_diagonal(n, seed):
    rng = make_rng(seed)
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    d = rng.uniform(-5, 5, size=n)
    s = q.T @ np.diag(d) @ q
    s = 0.5 * (s + s.T)
    assert sym_eig_min(s) == pytest.approx(d.min(), abs=1e-8)
    assert np.allclose(sym_eigvals(s), np.sort(d), atol=1e-8)


def test_finite_diff_examples():
    assert finite_diff_check(lambda t: float(t[0] ** 2), np.array([3.0]), np.array([6.0])) < 1e-8
    rng = make_rng(0)
    x = rng.normal(size=4)
    err = finite_diff_check(lambda t: float(t @ t), x, 4 * x)
    assert err == pytest.approx(1 / 3, abs=1e-6)
    with pytest.raises(ValueError):
        finite_diff_check(lambda t: 0.0, x, x, eps=1e-2)


def test_rng_reproducible():
    assert np.array_equal(make_rng(7).random(5), make_rng(7).random(5))
    assert np.array_equal(child_rng(7, 1, 2).random(3), child_rng(7, 1, 2).random(3))
    assert not np.array_equal(child_rng(7, 1).random(3), child_rng(7, 2).random(3))


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_numba_and_numpy_kernels_agree():
    rng = make_rng(1)
    E, P = rng.normal(size=(7, 4)), rng.normal(size=(5, 4))
    E[2] = 0.0
    assert np.allclose(_kernels._cosine_matrix_np(E, P), _kernels._cosine_matrix_nb(E, P), atol=1e-14)
    s = rng.normal(size=(6, 6))
    s = s + s.T
    a = np.sort(_kernels._jacobi_eigvals_np(s.copy(), 1e-12, 100))
    b = np.sort(_kernels._jacobi_eigvals_nb(s.copy(), 1e-12, 100))
    assert np.allclose(a, b, atol=1e-10)
    X, Y = rng.normal(size=(30, 3)), rng.normal(size=(20, 3))
    assert _kernels._min_pair_distance_np(X, Y) == pytest.approx(_kernels._min_pair_distance_nb(X, Y), abs=1e-12)
