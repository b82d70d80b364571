import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffdcm.errors import InvalidInputError, OracleError
from diffdcm.numkernel import (
    AdamState,
    adam_step,
    cross_entropy,
    finite_difference_gradient,
    make_rng,
    stable_softmax,
)

finite_vectors = arrays(
    np.float64,
    st.integers(1, 8),
    elements=st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False),
)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(stable_softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_log3(self):
        np.testing.assert_allclose(stable_softmax([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)

    def test_large_spread(self):
        # exp-normalisation evaluated at 40 digits with mpmath
        expected = [0.9999938558253042102, 9.3575654739699167157e-14, 6.1441746022141428804e-6]
        np.testing.assert_allclose(stable_softmax([20.0, -10.0, 8.0]), expected, rtol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            stable_softmax([0.0, np.nan])
        with pytest.raises(InvalidInputError):
            stable_softmax([np.inf, 0.0])

    def test_no_overflow_at_extremes(self):
        p = stable_softmax([1e4, -1e4, 0.0])
        assert np.all(np.isfinite(p))
        assert p[0] == 1.0

    @given(finite_vectors)
    def test_sums_to_one(self, v):
        p = stable_softmax(v)
        assert abs(p.sum() - 1.0) <= 1e-12
        assert np.all(p >= 0) and np.all(p <= 1)

    @given(finite_vectors, st.floats(-1e3, 1e3))
    def test_shift_invariance(self, v, c):
        np.testing.assert_allclose(stable_softmax(v + c), stable_softmax(v), atol=1e-12)

    def test_batch_rows_independent(self, rng):
        v = rng.normal(size=(5, 4))
        p = stable_softmax(v)
        for row, pr in zip(v, p):
            np.testing.assert_array_equal(stable_softmax(row), pr)


class TestCrossEntropy:
    def test_perfect(self):
        assert cross_entropy([1, 0, 0], [1.0, 0.0, 0.0]) == 0.0

    def test_uniform_three(self):
        assert cross_entropy([0, 1, 0], [1 / 3] * 3) == pytest.approx(math.log(3), abs=1e-12)

    def test_quarter(self):
        assert cross_entropy([1, 0], [0.25, 0.75]) == pytest.approx(math.log(4), abs=1e-12)

    def test_clamp_keeps_finite(self):
        assert cross_entropy([1, 0], [0.0, 1.0]) == pytest.approx(-math.log(1e-12))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            cross_entropy([1, 0, 0], [0.5, 0.5])

    @given(arrays(np.float64, 4, elements=st.floats(-50, 50)), st.integers(0, 3))
    def test_non_negative(self, v, k):
        y = np.eye(4)[k]
        assert cross_entropy(y, stable_softmax(v)) >= 0.0


class TestAdam:
    def test_first_step_is_lr_times_sign(self):
        theta = np.zeros(1)
        new, state = adam_step(theta, np.array([2.0]), AdamState.zeros_like(theta), 1e-3)
        # bias-corrected: -lr * 2 / (2 + 1e-8)
        assert new[0] == pytest.approx(-0.000999999995000000025, rel=1e-12)
        assert state.step == 1

    def test_zero_gradient_no_move(self):
        theta = np.array([0.3, -1.2])
        new, _ = adam_step(theta, np.zeros(2), AdamState.zeros_like(theta), 1e-3)
        np.testing.assert_array_equal(new, theta)

    def test_weight_decay_enters_gradient(self):
        theta = np.ones(1)
        new, _ = adam_step(theta, np.zeros(1), AdamState.zeros_like(theta), 1e-3, weight_decay=0.01)
        # hand-evaluated first step with g = 0.01 (mpmath): 1 - 1e-3 * 0.01 / (0.01 + 1e-8)
        assert new[0] == pytest.approx(0.999000000999999, rel=1e-14)

    def test_inputs_not_mutated_and_deterministic(self, rng):
        theta = rng.normal(size=(3, 2))
        grad = rng.normal(size=(3, 2))
        state = AdamState.zeros_like(theta)
        a1, s1 = adam_step(theta, grad, state, 1e-2, 0.1)
        a2, s2 = adam_step(theta, grad, state, 1e-2, 0.1)
        assert state.step == 0 and not state.m.any()
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(s1.v, s2.v)
        assert np.all(s1.v >= 0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            adam_step(np.zeros(2), np.zeros(3), AdamState.zeros_like(np.zeros(2)), 1e-3)

    def test_bad_hyperparameters(self):
        z = np.zeros(2)
        with pytest.raises(InvalidInputError):
            adam_step(z, z, AdamState.zeros_like(z), 0.0)
        with pytest.raises(InvalidInputError):
            adam_step(z, z, AdamState.zeros_like(z), 1e-3, weight_decay=-1.0)

    def test_converges_on_quadratic(self):
        theta = np.array([5.0, -3.0])
        state = AdamState.zeros_like(theta)
        for _ in range(5000):
            theta, state = adam_step(theta, 2 * theta, state, 1e-2)
        assert np.all(np.abs(theta) < 1e-2)


class TestFiniteDifference:
    def test_square(self):
        g = finite_difference_gradient(lambda t: float(t[0] ** 2), np.array([3.0]))
        assert g[0] == pytest.approx(6.0, abs=1e-6)

    def test_constant(self):
        g = finite_difference_gradient(lambda t: 4.2, np.ones((2, 3)))
        np.testing.assert_array_equal(g, np.zeros((2, 3)))

    def test_quadratic_form(self, rng):
        A = rng.normal(size=(4, 4))
        A = A @ A.T
        b = rng.normal(size=4)
        theta = rng.normal(size=4)
        g = finite_difference_gradient(lambda t: float(t @ A @ t + b @ t), theta)
        np.testing.assert_allclose(g, 2 * A @ theta + b, rtol=1e-6)

    def test_does_not_modify_input(self):
        theta = np.array([1.0, 2.0])
        finite_difference_gradient(lambda t: float(t.sum()), theta)
        np.testing.assert_array_equal(theta, [1.0, 2.0])

    def test_non_finite_raises(self):
        with pytest.raises(OracleError), np.errstate(invalid="ignore", divide="ignore"):
            finite_difference_gradient(lambda t: float(np.log(t[0])), np.array([0.0]))


def test_rng_is_reproducible():
    a = make_rng(7).random(5)
    b = make_rng(7).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(make_rng(7, 1).random(5), a)
    with pytest.raises(InvalidInputError):
        make_rng(-1)
