import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nudg import linalg
from oracles import central_difference

# frozen from oracles.singular_values_2x2([[1, 2], [3, 4]])
SV_1234 = (5.464985704219043, 0.3659661906262571)


def check_svd(m, res):
    m = np.asarray(m, dtype=float)
    k = min(m.shape[-2:])
    recon = res.u @ (res.sigma[..., :, None] * res.vt)
    scale = np.maximum(1.0, np.linalg.norm(m, axis=(-2, -1)))
    assert np.all(np.linalg.norm(recon - m, axis=(-2, -1)) <= 1e-8 * scale)
    eye = np.eye(k)
    assert np.max(np.abs(np.swapaxes(res.u, -1, -2) @ res.u - eye)) < 1e-10
    assert np.max(np.abs(res.vt @ np.swapaxes(res.vt, -1, -2) - eye)) < 1e-10
    assert np.all(res.sigma >= 0)
    assert np.all(np.diff(res.sigma, axis=-1) <= 0)


def test_diagonal_with_negative_entry():
    res = linalg.svd(np.diag([3.0, -4.0]))
    np.testing.assert_allclose(res.sigma, [4.0, 3.0], atol=1e-15)
    check_svd(np.diag([3.0, -4.0]), res)


def test_two_by_two_against_quadratic_formula():
    res = linalg.svd([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(res.sigma, SV_1234, rtol=1e-13)
    assert linalg.nuclear_norm([[1.0, 2.0], [3.0, 4.0]]) == pytest.approx(5.83095189, abs=1e-8)


def test_zero_matrix():
    z = np.zeros((3, 2))
    res = linalg.svd(z)
    assert np.all(res.sigma == 0)
    check_svd(z, res)
    assert linalg.nuclear_norm(z) == 0.0
    with pytest.raises(ValueError):
        linalg.stable_rank(z)


def test_rejects_non_finite():
    with pytest.raises(ValueError):
        linalg.svd([[1.0, np.nan]])
    with pytest.raises(ValueError):
        linalg.svd(np.ones((0, 3)))


@pytest.mark.parametrize("shape", [(2, 2), (5, 3), (3, 5), (8, 8), (64, 16), (1, 4), (4, 1)])
def test_reconstruction_and_ordering_random_stack(shape):
    rng = np.random.default_rng(sum(shape))
    m = rng.standard_normal((200,) + shape) * rng.uniform(0.01, 100, size=(200, 1, 1))
    res = linalg.svd(m)
    check_svd(m, res)
    spec, frob, nuc = linalg.spectral_norm(m), linalg.frobenius_norm(m), linalg.nuclear_norm(m)
    assert np.all(spec <= frob * (1 + 1e-12))
    assert np.all(frob <= nuc * (1 + 1e-12))


def test_rank_deficient_orthonormal_completion():
    u = np.array([[1.0], [2.0], [2.0], [0.0]]) / 3.0
    m = u @ np.array([[3.0, 0.0, 4.0]])
    res = linalg.svd(m)
    check_svd(m, res)
    assert linalg.numeric_rank(m) == 1
    assert linalg.stable_rank(m) == pytest.approx(1.0)


def test_norm_examples():
    assert linalg.spectral_norm(np.eye(3)) == pytest.approx(1.0)
    assert linalg.frobenius_norm(np.eye(3)) == pytest.approx(math.sqrt(3))
    assert linalg.spectral_norm(np.diag([3.0, -4.0])) == pytest.approx(4.0)
    assert linalg.frobenius_norm(np.diag([3.0, -4.0])) == pytest.approx(5.0)
    u = np.array([0.6, 0.8])
    v = np.array([1.0, 0.0, 0.0])
    assert linalg.spectral_norm(np.outer(u, v)) == pytest.approx(1.0)
    assert linalg.frobenius_norm(np.outer(u, v)) == pytest.approx(1.0)


def test_stable_rank_examples():
    assert linalg.stable_rank(np.eye(5)) == pytest.approx(5.0)
    assert linalg.stable_rank(np.diag([3.0, 4.0])) == pytest.approx(1.5625)
    assert linalg.stable_rank(np.outer([1.0, -2.0, 0.5], [3.0, 1.0])) == pytest.approx(1.0)


def test_subgradient_examples():
    np.testing.assert_allclose(linalg.nuclear_norm_subgradient(np.diag([2.0, 5.0])), np.eye(2), atol=1e-14)
    np.testing.assert_allclose(
        linalg.nuclear_norm_subgradient(np.diag([-2.0, 5.0])), np.diag([-1.0, 1.0]), atol=1e-14
    )


def test_subgradient_rank_deficient_is_minimal_element():
    m = np.outer([1.0, 2.0, 2.0], [2.0, 1.0]) / 3.0
    g = linalg.nuclear_norm_subgradient(m)
    res = linalg.svd(m)
    np.testing.assert_allclose(g, np.outer(res.u[:, 0], res.vt[0]), atol=1e-12)
    assert np.linalg.matrix_rank(g) == 1


def test_subgradient_matches_finite_differences_4x3():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((4, 3))
    fd = central_difference(linalg.nuclear_norm, m, 1e-6)
    g = linalg.nuclear_norm_subgradient(m)
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-5


def test_unitary_invariance():
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = rng.standard_normal((6, 4))
        q1, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        q2, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        assert abs(linalg.nuclear_norm(q1 @ m @ q2) - linalg.nuclear_norm(m)) < 1e-9


def test_convex_envelope_bound():
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = rng.standard_normal((5, 4)) @ np.diag([1, 1, 0, 0]) @ rng.standard_normal((4, 4))
        m /= linalg.spectral_norm(m)
        assert linalg.nuclear_norm(m) <= linalg.numeric_rank(m) + 1e-12


def test_deterministic():
    m = np.random.default_rng(1).standard_normal((7, 5))
    a, b = linalg.svd(m), linalg.svd(m.copy())
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_input_not_mutated():
    m = np.random.default_rng(2).standard_normal((3, 6))
    before = m.copy()
    linalg.svd(m)
    assert np.array_equal(m, before)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e150, 1e150, allow_nan=False, allow_infinity=False)))
def test_property_reconstruction(m):
    check_svd(m, linalg.svd(m))


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 7), st.integers(1, 7)), elements=st.sampled_from([-1.0, 0.0, 1.0])))
def test_property_rank_deficient_small_integers(m):
    res = linalg.svd(m)
    check_svd(m, res)
    assert linalg.numeric_rank(m) == np.linalg.matrix_rank(m)
