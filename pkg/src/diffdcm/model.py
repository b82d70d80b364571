"""Log/exp two-layer choice model.

The network maps a positive feature vector ``x`` (length n) to utilities::

    z_j = prod_i x_i ** w1[i, j]            (hidden product terms, no bias)
    V_k = sum_j w2[j, k] * z_j + b2[k]      (utilities)
    p   = softmax(V)

Each hidden node is therefore a monomial with real exponents, and each
utility is a polynomial-like sum of those monomials plus a constant.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidInputError, ParseError
from .numkernel import PROB_FLOOR, make_rng, stable_softmax


@dataclass
class ModelParams:
    w1: np.ndarray  # (n, m) exponents
    w2: np.ndarray  # (m, l) coefficients
    b2: np.ndarray  # (l,) constants
    feature_names: list[str] = field(default_factory=list)
    alt_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.w1 = np.array(self.w1, dtype=float, ndmin=2)
        self.w2 = np.array(self.w2, dtype=float, ndmin=2)
        self.b2 = np.array(self.b2, dtype=float).reshape(-1)
        n, m = self.w1.shape
        l = self.b2.size
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(n)]
        if not self.alt_names:
            self.alt_names = [str(k + 1) for k in range(l)]
        self.feature_names = list(self.feature_names)
        self.alt_names = list(self.alt_names)
        self.validate()

    @property
    def n(self) -> int:
        return self.w1.shape[0]

    @property
    def m(self) -> int:
        return self.w1.shape[1]

    @property
    def l(self) -> int:
        return self.b2.size

    def validate(self) -> None:
        n, m = self.w1.shape
        if self.w2.shape != (m, self.b2.size):
            raise InvalidInputError(
                f"w2 shape {self.w2.shape} inconsistent with w1 {self.w1.shape} and b2 {self.b2.shape}"
            )
        if len(self.feature_names) != n:
            raise InvalidInputError(f"{len(self.feature_names)} feature names for {n} features")
        if len(self.alt_names) != self.b2.size:
            raise InvalidInputError(f"{len(self.alt_names)} alternative names for {self.b2.size} alternatives")
        for name in ("w1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise InvalidInputError(f"{name} contains non-finite values")

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.w1.copy(), self.w2.copy(), self.b2.copy(), list(self.feature_names), list(self.alt_names)
        )


@dataclass
class ForwardTrace:
    x: np.ndarray
    log_x: np.ndarray
    z: np.ndarray
    v: np.ndarray
    p: np.ndarray


def init_params(
    n: int,
    m: int,
    l: int,
    seed: int,
    feature_names: Sequence[str] | None = None,
    alt_names: Sequence[str] | None = None,
) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation from the seeded generator.

    Draw order is w1, w2, b2; the b2 bound uses the second layer's fan-in (m).
    """
    if min(n, m, l) < 1:
        raise InvalidInputError(f"dimensions must be positive, got n={n}, m={m}, l={l}")
    rng = make_rng(seed)
    k1 = 1.0 / np.sqrt(n)
    k2 = 1.0 / np.sqrt(m)
    w1 = rng.uniform(-k1, k1, size=(n, m))
    w2 = rng.uniform(-k2, k2, size=(m, l))
    b2 = rng.uniform(-k2, k2, size=l)
    return ModelParams(w1, w2, b2, list(feature_names or []), list(alt_names or []))


def _check_positive(x: np.ndarray, feature_names: Sequence[str]) -> None:
    if np.all(x > 0):
        return
    bad = np.argwhere(~(x > 0))
    col = int(bad[0, -1])
    name = feature_names[col] if col < len(feature_names) else f"x{col + 1}"
    raise DomainError(f"feature '{name}' has non-positive value {x[tuple(bad[0])]!r}; normalise the data first")


def forward(params: ModelParams, x: np.ndarray, log_x: np.ndarray | None = None) -> ForwardTrace:
    """Evaluate the network on a batch ``x`` of shape (B, n) (or a single vector).

    ``log_x`` may be supplied to skip the logarithm when the caller has cached it.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.shape[1] != params.n:
        raise InvalidInputError(f"expected {params.n} features, got {x2.shape[1]}")
    if log_x is None:
        _check_positive(x2, params.feature_names)
        log_x = np.log(x2)
    else:
        log_x = log_x.reshape(x2.shape)
    z = np.exp(log_x @ params.w1)
    v = z @ params.w2 + params.b2
    p = stable_softmax(v)
    return ForwardTrace(x2, log_x, z, v, p)


def one_hot(labels: np.ndarray, l: int) -> np.ndarray:
    """One-hot encode 1-based labels into a (B, l) matrix."""
    labels = np.asarray(labels, dtype=int).reshape(-1)
    if labels.size and (labels.min() < 1 or labels.max() > l):
        raise InvalidInputError(f"labels must lie in 1..{l}")
    y = np.zeros((labels.size, l))
    y[np.arange(labels.size), labels - 1] = 1.0
    return y


def mean_loss(trace: ForwardTrace, y: np.ndarray) -> float:
    """Batch-mean cross-entropy of a forward trace."""
    return float(-(y * np.log(np.maximum(trace.p, PROB_FLOOR))).sum(axis=1).mean())


def backward_params(
    params: ModelParams, trace: ForwardTrace, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dW1, dW2, db2) of the batch-mean cross-entropy."""
    y = np.asarray(y, dtype=float)
    if y.shape != trace.p.shape:
        raise InvalidInputError(f"y shape {y.shape} does not match probabilities {trace.p.shape}")
    d_v = (trace.p - y) / y.shape[0]
    db2 = d_v.sum(axis=0)
    dw2 = trace.z.T @ d_v
    d_a = (d_v @ params.w2.T) * trace.z
    dw1 = trace.log_x.T @ d_a
    return dw1, dw2, db2


def utility_input_jacobian(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """d V_k / d x_i for a single positive vector, returned with shape (l, n)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_positive(x, params.feature_names)
    z = np.exp(np.log(x) @ params.w1)  # (m,)
    # sum_j w2[j,k] * w1[i,j] * z_j / x_i
    return (params.w2.T * z) @ params.w1.T / x


def grad_wrt_input(
    params: ModelParams,
    x: np.ndarray,
    target: int | None = None,
    y: np.ndarray | int | None = None,
) -> np.ndarray:
    """Gradient over features of a utility or of the loss.

    Exactly one of ``target`` (0-based alternative index, gives dV_target/dx)
    or ``y`` (one-hot vector or 1-based label, gives dL(y, p(x))/dx) is used.
    """
    if (target is None) == (y is None):
        raise InvalidInputError("pass exactly one of target or y")
    jac = utility_input_jacobian(params, x)
    if target is not None:
        if not 0 <= target < params.l:
            raise InvalidInputError(f"target alternative {target} out of range")
        return jac[target]
    if np.isscalar(y):
        y = one_hot(np.array([y]), params.l)[0]
    y = np.asarray(y, dtype=float).reshape(-1)
    p = forward(params, x).p[0]
    return (p - y) @ jac


def batch_input_gradients(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Per-sample Jacobians dV/dx for a batch, shape (B, l, n)."""
    x = np.asarray(x, dtype=float)
    _check_positive(x, params.feature_names)
    z = np.exp(np.log(x) @ params.w1)  # (B, m)
    # jac[b,k,i] = sum_j w2[j,k] z[b,j] w1[i,j] / x[b,i]
    jac = np.einsum("jk,bj,ij->bki", params.w2, z, params.w1)
    return jac / x[:, None, :]


# --- checkpoint I/O -------------------------------------------------------


def params_to_dict(params: ModelParams, normalization: dict | None = None) -> dict:
    return {
        "n": params.n,
        "m": params.m,
        "l": params.l,
        "feature_names": params.feature_names,
        "alt_names": params.alt_names,
        "w1": params.w1.reshape(-1).tolist(),
        "w2": params.w2.reshape(-1).tolist(),
        "b2": params.b2.tolist(),
        "normalization": normalization,
    }


def params_from_dict(obj: dict) -> tuple[ModelParams, dict | None]:
    try:
        n, m, l = int(obj["n"]), int(obj["m"]), int(obj["l"])
        w1 = np.asarray(obj["w1"], dtype=float)
        w2 = np.asarray(obj["w2"], dtype=float)
        b2 = np.asarray(obj["b2"], dtype=float)
        feature_names = list(obj["feature_names"])
        alt_names = list(obj["alt_names"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model checkpoint: {exc}") from exc
    if w1.size != n * m or w2.size != m * l or b2.size != l:
        raise InvalidInputError(
            f"checkpoint sizes do not match n={n}, m={m}, l={l}: "
            f"|w1|={w1.size}, |w2|={w2.size}, |b2|={b2.size}"
        )
    params = ModelParams(w1.reshape(n, m), w2.reshape(m, l), b2, feature_names, alt_names)
    return params, obj.get("normalization")


def save_checkpoint(path: str | Path, params: ModelParams, normalization: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params, normalization), indent=2))


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict | None]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return params_from_dict(obj)
