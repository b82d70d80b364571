import math

import numpy as np
import pytest

from conftest import assert_grad_close
from diffdcm.baseline_mnl import (
    MnlEstimate,
    MnlSpec,
    MnlTerm,
    design_tensor,
    mnl_estimate,
    mnl_hessian,
    mnl_loglik_and_grad,
    mnl_predict,
    normal_cdf,
    swissmetro_spec,
    two_sided_p,
)
from diffdcm.data import Dataset
from diffdcm.errors import ConfigError, EstimationError, InvalidInputError
from diffdcm.numkernel import finite_difference_gradient


def toy_dataset(rng, N=400, beta=(0.5, -0.8), asc=0.3):
    x = rng.uniform(0, 2, size=(N, 2))
    v2 = asc + beta[0] * x[:, 0] + beta[1] * x[:, 1]
    p2 = 1 / (1 + np.exp(-v2))
    labels = np.where(rng.random(N) < p2, 2, 1)
    return Dataset(x, labels, ["a", "b"], ["one", "two"])


def toy_spec():
    return MnlSpec([MnlTerm("two", "a", "B_a"), MnlTerm("two", "b", "B_b")], ["two"], "one")


class TestPValues:
    def test_known_values(self):
        # reference values evaluated with mpmath at 30 digits
        assert two_sided_p(-1.76) == pytest.approx(0.078407806575, rel=1e-10)
        assert two_sided_p(-1.7619047619) == pytest.approx(0.0780853899369, rel=1e-10)
        assert two_sided_p(-14.488) == pytest.approx(1.44e-47, rel=0.01)
        assert two_sided_p(0.0) == 1.0

    def test_cdf(self):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(1.959963984540054) == pytest.approx(0.975, rel=1e-12)


class TestLikelihood:
    def test_gradient_fd(self, rng):
        ds = toy_dataset(rng, N=60)
        spec = toy_spec()
        beta = rng.normal(size=3)
        _, g = mnl_loglik_and_grad(spec, beta, ds)
        numeric = finite_difference_gradient(lambda b: mnl_loglik_and_grad(spec, b, ds)[0], beta.copy(), h=1e-6)
        assert_grad_close(g, numeric, rel=1e-5, floor=1e-6)

    def test_hessian_fd(self, rng):
        ds = toy_dataset(rng, N=60)
        spec = toy_spec()
        beta = rng.normal(size=3)
        H = mnl_hessian(spec, beta, ds)
        cols = [
            finite_difference_gradient(lambda b, i=i: mnl_loglik_and_grad(spec, b, ds)[1][i], beta.copy(), h=1e-6)
            for i in range(3)
        ]
        np.testing.assert_allclose(H, np.array(cols), rtol=1e-5, atol=1e-6)

    def test_zero_params_uniform(self, rng):
        ds = toy_dataset(rng, N=10)
        ll, _ = mnl_loglik_and_grad(toy_spec(), np.zeros(3), ds)
        assert ll == pytest.approx(10 * math.log(0.5))

    def test_design_shared_param(self):
        ds = Dataset(np.array([[1.0, 2.0]]), [1], ["a", "b"], ["x", "y"])
        spec = MnlSpec([MnlTerm("x", "a", "B"), MnlTerm("y", "b", "B")], [], "x")
        np.testing.assert_array_equal(design_tensor(spec, ds)[0], [[1.0], [2.0]])


class TestEstimation:
    def test_closed_form_binary(self):
        # ASC-free binary logit with one binary regressor: MLE = log(n2/n1) among x=1 rows
        x = np.array([1.0] * 30 + [0.0] * 10)
        labels = np.array([2] * 20 + [1] * 10 + [1] * 5 + [2] * 5)
        ds = Dataset(x[:, None], labels, ["x"], ["one", "two"])
        est = mnl_estimate(MnlSpec([MnlTerm("two", "x", "B")], [], "one"), ds)
        assert est.estimates[0] == pytest.approx(math.log(2.0), abs=1e-10)
        # Fisher information = sum over x=1 rows of p(1-p) = 30 * 2/9
        assert est.std_err[0] == pytest.approx(1 / math.sqrt(30 * 2 / 9), rel=1e-8)

    def test_recovers_parameters(self):
        rng = np.random.default_rng(3)
        ds = toy_dataset(rng, N=20000)
        est = mnl_estimate(toy_spec(), ds)
        assert est.names == ["ASC_two", "B_a", "B_b"]
        assert np.all(np.abs(est.estimates - [0.3, 0.5, -0.8]) < 4 * est.std_err)
        np.testing.assert_allclose(est.t_stat, est.estimates / est.std_err)
        assert est.converged
        assert 0 <= mnl_predict(toy_spec(), est, ds)["accuracy"] <= 1

    def test_collinear_raises(self, rng):
        ds = toy_dataset(rng, N=50)
        ds.features[:, 1] = 2 * ds.features[:, 0]
        with pytest.raises(EstimationError, match="B_a"):
            mnl_estimate(toy_spec(), ds)

    def test_config_errors(self, rng):
        ds = toy_dataset(rng, N=5)
        with pytest.raises(ConfigError):
            design_tensor(MnlSpec([MnlTerm("two", "zzz", "B")], [], "one"), ds)
        with pytest.raises(ConfigError):
            design_tensor(MnlSpec([MnlTerm("three", "a", "B")], [], "one"), ds)
        with pytest.raises(ConfigError):
            MnlSpec([], ["one"], "one")
        with pytest.raises(ConfigError):
            MnlSpec.from_dict({"terms": []})
        with pytest.raises(InvalidInputError):
            mnl_estimate(toy_spec(), ds.subset(np.array([], dtype=int)))

    def test_table_and_dict(self):
        est = MnlEstimate(
            ["b", "ASC_x", "A"], np.array([1.0, -2.0, 0.5]), np.ones(3), np.array([1.0, -2.0, 0.5]),
            np.array([0.3, 0.05, 0.6]), -12.5, 4,
        )
        lines = est.table().splitlines()
        assert lines[0].split() == ["Parameters", "Estimates", "Std.", "err.", "t-stat", "p-value"]
        assert [ln.split()[0] for ln in lines[2:5]] == ["A", "ASC_x", "b"]
        assert lines[-1].startswith("Final log-likelihood: -12.500")
        assert est.as_dict()["parameters"][0]["name"] == "b"


def test_swissmetro_spec_round_trip(tmp_path):
    spec = swissmetro_spec()
    assert spec.param_names[:2] == ["ASC_SM", "ASC_car"]
    assert set(spec.param_names) == {"ASC_SM", "ASC_car", "B_T", "B_C", "B_Freq", "B_GA", "B_Age", "B_Seats", "B_Luggage"}
    path = tmp_path / "spec.json"
    import json

    path.write_text(json.dumps(spec.to_dict()))
    assert MnlSpec.load(path).param_names == spec.param_names
