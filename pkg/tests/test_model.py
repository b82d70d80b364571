import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import assert_grad_close, random_params
from diffdcm.errors import DomainError, InvalidInputError, ParseError
from diffdcm.model import (
    ModelParams,
    backward_params,
    batch_input_gradients,
    forward,
    grad_wrt_input,
    init_params,
    load_checkpoint,
    mean_loss,
    one_hot,
    params_from_dict,
    params_to_dict,
    save_checkpoint,
    utility_input_jacobian,
)
from diffdcm.numkernel import finite_difference_gradient


def hand_params():
    # one node: z = x1^2 * x2, V1 = 3 z - 1, V2 = 0
    return ModelParams(np.array([[2.0], [1.0]]), np.array([[3.0, 0.0]]), np.array([-1.0, 0.0]))


class TestForward:
    def test_hand_example(self):
        tr = forward(hand_params(), np.array([2.0, 3.0]))
        assert tr.z[0, 0] == pytest.approx(12.0)
        np.testing.assert_allclose(tr.v[0], [35.0, 0.0])
        assert tr.p[0, 0] == pytest.approx(1 / (1 + np.exp(-35.0)), rel=1e-14)

    def test_monomial_identity(self, rng):
        params = random_params(rng, n=3, m=5, l=2)
        x = rng.uniform(0.1, 10, size=(4, 3))
        tr = forward(params, x)
        direct = np.prod(x[:, :, None] ** params.w1[None], axis=1)
        np.testing.assert_allclose(tr.z, direct, rtol=1e-12)

    def test_rejects_non_positive(self):
        with pytest.raises(DomainError, match="x2"):
            forward(hand_params(), np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            forward(hand_params(), np.array([[1.0, 1.0], [-1.0, 1.0]]))

    def test_wrong_width(self):
        with pytest.raises(InvalidInputError):
            forward(hand_params(), np.ones(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_probabilities_valid(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        p = forward(params, rng.uniform(1e-4, 10, size=(6, 3))).p
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((p >= 0) & (p <= 1))


class TestParams:
    def test_shape_validation(self):
        with pytest.raises(InvalidInputError):
            ModelParams(np.ones((2, 3)), np.ones((4, 2)), np.ones(2))
        with pytest.raises(InvalidInputError):
            ModelParams(np.ones((2, 3)), np.ones((3, 2)), np.ones(2), feature_names=["a"])
        with pytest.raises(InvalidInputError):
            ModelParams(np.full((1, 1), np.nan), np.ones((1, 1)), np.ones(1))

    def test_init_bounds_and_determinism(self):
        a = init_params(4, 9, 3, seed=5)
        b = init_params(4, 9, 3, seed=5)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.b2, b.b2)
        assert np.all(np.abs(a.w1) <= 0.5)
        assert np.all(np.abs(a.w2) <= 1 / 3) and np.all(np.abs(a.b2) <= 1 / 3)
        assert not np.array_equal(init_params(4, 9, 3, seed=6).w1, a.w1)

    def test_init_rejects_zero_dims(self):
        with pytest.raises(InvalidInputError):
            init_params(0, 3, 2, seed=0)

    def test_copy_is_deep(self):
        p = hand_params()
        q = p.copy()
        q.w1[0, 0] = 9.0
        assert p.w1[0, 0] == 2.0


class TestGradients:
    def test_hand_input_gradient(self):
        params = hand_params()
        g = grad_wrt_input(params, np.array([2.0, 3.0]), target=0)
        # d(3 x1^2 x2)/dx1 = 6 x1 x2, d/dx2 = 3 x1^2
        np.testing.assert_allclose(g, [36.0, 12.0], rtol=1e-14)

    def test_param_gradients_fd(self, rng):
        params = random_params(rng, n=3, m=4, l=3)
        x = rng.uniform(0.5, 5, size=(7, 3))
        y = one_hot(rng.integers(1, 4, size=7), 3)
        dw1, dw2, db2 = backward_params(params, forward(params, x), y)
        for name, analytic in (("w1", dw1), ("w2", dw2), ("b2", db2)):
            base = getattr(params, name)

            def f(t, name=name):
                q = params.copy()
                setattr(q, name, t)
                return mean_loss(forward(q, x), y)

            assert_grad_close(analytic, finite_difference_gradient(f, base.copy(), h=1e-6))

    def test_loss_input_gradient_fd(self, rng):
        params = random_params(rng)
        x = rng.uniform(1, 5, size=3)
        g = grad_wrt_input(params, x, y=2)
        numeric = finite_difference_gradient(lambda t: mean_loss(forward(params, t), one_hot([2], 3)), x.copy(), h=1e-6)
        assert_grad_close(g, numeric)

    def test_batch_matches_single(self, rng):
        params = random_params(rng)
        x = rng.uniform(0.1, 10, size=(5, 3))
        batch = batch_input_gradients(params, x)
        for b in range(5):
            np.testing.assert_allclose(batch[b], utility_input_jacobian(params, x[b]), rtol=1e-12)

    def test_grad_argument_checks(self):
        p = hand_params()
        with pytest.raises(InvalidInputError):
            grad_wrt_input(p, np.ones(2))
        with pytest.raises(InvalidInputError):
            grad_wrt_input(p, np.ones(2), target=0, y=1)
        with pytest.raises(InvalidInputError):
            grad_wrt_input(p, np.ones(2), target=5)

    def test_backward_shape_check(self):
        p = hand_params()
        with pytest.raises(InvalidInputError):
            backward_params(p, forward(p, np.ones((2, 2))), np.ones((3, 2)))


def test_one_hot():
    np.testing.assert_array_equal(one_hot([1, 3], 3), [[1, 0, 0], [0, 0, 1]])
    with pytest.raises(InvalidInputError):
        one_hot([0], 3)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        params = random_params(rng)
        norm = {"min": [0.0, 1.0, 2.0], "max": [1.0, 2.0, 3.0], "epsilon": 1e-4, "scale": 10.0}
        path = tmp_path / "m.json"
        save_checkpoint(path, params, norm)
        back, norm2 = load_checkpoint(path)
        for name in ("w1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(back, name), getattr(params, name))
        assert norm2 == norm
        assert json.loads(path.read_text())["n"] == 3

    def test_size_mismatch(self, rng):
        d = params_to_dict(random_params(rng))
        d["m"] = 5
        with pytest.raises(InvalidInputError):
            params_from_dict(d)

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_checkpoint(path)
        with pytest.raises(ParseError):
            params_from_dict({"n": 1})
