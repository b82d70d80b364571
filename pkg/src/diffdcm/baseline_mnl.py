"""Linear-in-parameters multinomial logit: maximum likelihood by damped Newton,
with standard errors, t-statistics and p-values from the analytic Hessian."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import metrics_from_probs
from .data import Dataset
from .errors import ConfigError, EstimationError, InvalidInputError
from .numkernel import PROB_FLOOR, stable_softmax


@dataclass
class MnlTerm:
    alt: str
    feature: str
    param: str


@dataclass
class MnlSpec:
    """Utility specification: V_alt = ASC_alt + sum(param * feature) over the alt's terms.

    ``ascs`` lists the alternatives with a free constant; ``reference_alt``
    has its constant fixed at zero. Parameters may be shared across alternatives.
    """

    terms: list[MnlTerm]
    ascs: list[str]
    reference_alt: str

    def __post_init__(self):
        self.terms = [t if isinstance(t, MnlTerm) else MnlTerm(**t) for t in self.terms]
        if self.reference_alt in self.ascs:
            raise ConfigError(f"reference alternative '{self.reference_alt}' cannot have a free ASC")

    @property
    def param_names(self) -> list[str]:
        names = [f"ASC_{a}" for a in self.ascs]
        for t in self.terms:
            if t.param not in names:
                names.append(t.param)
        return names

    @classmethod
    def from_dict(cls, obj: dict) -> "MnlSpec":
        try:
            return cls([MnlTerm(**t) for t in obj["terms"]], list(obj.get("ascs", [])), obj["reference_alt"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed MNL spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "reference_alt": self.reference_alt,
            "terms": [vars(t) for t in self.terms],
            "ascs": list(self.ascs),
        }

    @classmethod
    def load(cls, path: str | Path) -> "MnlSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class MnlEstimate:
    names: list[str]
    estimates: np.ndarray
    std_err: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    log_likelihood: float
    iterations: int
    converged: bool = True

    def as_dict(self) -> dict:
        return {
            "parameters": [
                {"name": n, "estimate": float(e), "std_err": float(s), "t_stat": float(t), "p_value": float(p)}
                for n, e, s, t, p in zip(self.names, self.estimates, self.std_err, self.t_stat, self.p_value)
            ],
            "log_likelihood": self.log_likelihood,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def table(self) -> str:
        """Aligned text table: Parameters / Estimates / Std. err. / t-stat / p-value."""
        rows = [("Parameters", "Estimates", "Std. err.", "t-stat", "p-value")]
        order = sorted(range(len(self.names)), key=lambda i: self.names[i].lower())
        for i in order:
            rows.append(
                (
                    self.names[i],
                    f"{self.estimates[i]:.3g}",
                    f"{self.std_err[i]:.3g}",
                    f"{self.t_stat[i]:.3g}",
                    f"{self.p_value[i]:.3g}",
                )
            )
        widths = [max(len(r[c]) for r in rows) for c in range(5)]
        lines = [
            "  ".join(cell.ljust(w) if c == 0 else cell.rjust(w) for c, (cell, w) in enumerate(zip(r, widths)))
            for r in rows
        ]
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"Final log-likelihood: {self.log_likelihood:.3f}  (iterations: {self.iterations})")
        return "\n".join(lines) + "\n"


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the C library's erf (double precision)."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def two_sided_p(t: float) -> float:
    """2 * (1 - Phi(|t|)), computed with erfc to keep precision in the tail."""
    return math.erfc(abs(t) / math.sqrt(2.0))


def design_tensor(spec: MnlSpec, dataset: Dataset) -> np.ndarray:
    """X with shape (N, l, P) such that V = X @ beta."""
    names = spec.param_names
    alts = dataset.alt_names
    X = np.zeros((len(dataset), len(alts), len(names)))
    for a in [*spec.ascs, spec.reference_alt]:
        if a not in alts:
            raise ConfigError(f"unknown alternative '{a}' (dataset has {', '.join(alts)})")
    for a in spec.ascs:
        X[:, alts.index(a), names.index(f"ASC_{a}")] = 1.0
    for t in spec.terms:
        if t.alt not in alts:
            raise ConfigError(f"unknown alternative '{t.alt}' in term {t}")
        if t.feature not in dataset.feature_names:
            raise ConfigError(f"unknown feature '{t.feature}' in term {t}")
        X[:, alts.index(t.alt), names.index(t.param)] += dataset.features[:, dataset.feature_names.index(t.feature)]
    return X


def _loglik_parts(X: np.ndarray, labels: np.ndarray, beta: np.ndarray):
    V = X @ beta
    p = stable_softmax(V)
    rows = np.arange(labels.size)
    ll = float(np.sum(np.log(np.maximum(p[rows, labels - 1], PROB_FLOOR))))
    xbar = np.einsum("nk,nkp->np", p, X)
    grad = (X[rows, labels - 1] - xbar).sum(axis=0)
    return ll, grad, p, xbar


def mnl_loglik_and_grad(spec: MnlSpec, params: np.ndarray, dataset: Dataset) -> tuple[float, np.ndarray]:
    X = design_tensor(spec, dataset)
    ll, grad, _, _ = _loglik_parts(X, dataset.labels, np.asarray(params, dtype=float))
    return ll, grad


def _hessian(X: np.ndarray, p: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    dev = X - xbar[:, None, :]
    return -np.einsum("nk,nkp,nkq->pq", p, dev, dev)


def mnl_hessian(spec: MnlSpec, params: np.ndarray, dataset: Dataset) -> np.ndarray:
    X = design_tensor(spec, dataset)
    _, _, p, xbar = _loglik_parts(X, dataset.labels, np.asarray(params, dtype=float))
    return _hessian(X, p, xbar)


def _collinear_names(H: np.ndarray, names: Sequence[str]) -> list[str]:
    w, vecs = np.linalg.eigh(-H)
    v = vecs[:, 0]
    return [names[i] for i in np.flatnonzero(np.abs(v) > 0.1)]


def mnl_estimate(
    spec: MnlSpec,
    dataset: Dataset,
    max_iter: int = 500,
    tol: float = 1e-8,
    start: np.ndarray | None = None,
) -> MnlEstimate:
    """Maximise the (globally concave) MNL log-likelihood by damped Newton.

    Iterates until the largest absolute gradient entry is below ``tol``.
    Standard errors come from the inverse of the negative Hessian at the optimum.
    """
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    names = spec.param_names
    X = design_tensor(spec, dataset)
    labels = dataset.labels
    beta = np.zeros(len(names)) if start is None else np.array(start, dtype=float)
    ll, grad, p, xbar = _loglik_parts(X, labels, beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        H = _hessian(X, p, xbar)
        try:
            L = np.linalg.cholesky(-H)
        except np.linalg.LinAlgError:
            raise EstimationError(
                f"singular Hessian; collinear parameters: {', '.join(_collinear_names(H, names))}"
            ) from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, grad))
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c, grad_c, p_c, xbar_c = _loglik_parts(X, labels, cand)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll, grad, p, xbar = cand, ll_c, grad_c, p_c, xbar_c
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
    if not converged:
        raise EstimationError(f"no convergence after {max_iter} iterations (|grad|={np.max(np.abs(grad)):.3g})")
    H = _hessian(X, p, xbar)
    info = -H
    eig = np.linalg.eigvalsh(info)
    if eig[0] <= 1e-12 * max(eig[-1], 1.0):
        raise EstimationError(f"singular Hessian; collinear parameters: {', '.join(_collinear_names(H, names))}")
    cov = np.linalg.inv(info)
    se = np.sqrt(np.diag(cov))
    tstat = beta / se
    pval = np.array([two_sided_p(t) for t in tstat])
    return MnlEstimate(list(names), beta, se, tstat, pval, ll, it, converged)


def mnl_probabilities(spec: MnlSpec, estimate: MnlEstimate, dataset: Dataset) -> np.ndarray:
    if spec.param_names != estimate.names:
        raise ConfigError("estimate does not belong to this specification")
    return stable_softmax(design_tensor(spec, dataset) @ estimate.estimates)


def mnl_predict(spec: MnlSpec, estimate: MnlEstimate, dataset: Dataset) -> dict:
    """Accuracy and log-likelihood, same definitions as the network's predict_metrics."""
    return metrics_from_probs(mnl_probabilities(spec, estimate, dataset), dataset.labels)


def swissmetro_spec() -> MnlSpec:
    """The expert-designed benchmark utilities over the Swissmetro feature names."""
    terms = [
        ("train", "T_train", "B_T"),
        ("train", "C_train", "B_C"),
        ("train", "Freq_train", "B_Freq"),
        ("train", "GA", "B_GA"),
        ("train", "Age", "B_Age"),
        ("SM", "T_SM", "B_T"),
        ("SM", "C_SM", "B_C"),
        ("SM", "Freq_SM", "B_Freq"),
        ("SM", "GA", "B_GA"),
        ("SM", "Seats", "B_Seats"),
        ("car", "T_car", "B_T"),
        ("car", "C_car", "B_C"),
        ("car", "Luggage", "B_Luggage"),
    ]
    return MnlSpec([MnlTerm(*t) for t in terms], ["SM", "car"], "train")
