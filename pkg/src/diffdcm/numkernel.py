"""Dense numeric primitives: softmax, cross-entropy, Adam and a finite-difference oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Randomness always goes through :func:`make_rng`, which wraps numpy's
PCG64 bit generator so a seed yields the same stream on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError, OracleError

PROB_FLOOR = 1e-12


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return the package's deterministic generator (PCG64) for ``seed``.

    ``stream`` selects an independent sub-stream so that, e.g., parameter
    initialisation and batch shuffling never share draws.
    """
    if seed < 0 or stream < 0:
        raise InvalidInputError(f"seed and stream must be non-negative, got {seed}, {stream}")
    return np.random.Generator(np.random.PCG64([seed, stream] if stream else seed))


def stable_softmax(v: np.ndarray) -> np.ndarray:
    """Softmax along the last axis with max-subtraction.

    Accepts a single utility vector or a batch (rows are independent).
    """
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("softmax input contains non-finite values")
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(y: np.ndarray, p: np.ndarray) -> float:
    """Cross-entropy ``-sum(y * ln p)`` with p clamped below at 1e-12.

    For a batch (2-D inputs) the mean over rows is returned.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != p.shape:
        raise InvalidInputError(f"shape mismatch: y {y.shape} vs p {p.shape}")
    per_row = -(y * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=-1)
    return float(per_row.mean()) if per_row.ndim else float(per_row)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, theta: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(theta, dtype=float), np.zeros_like(theta, dtype=float), **kwargs)


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update with L2 weight decay folded into the gradient.

    Returns a new parameter array and a new state; the inputs are not modified.
    """
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise InvalidInputError(
            f"shape mismatch: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    if lr <= 0:
        raise InvalidInputError(f"learning rate must be positive, got {lr}")
    if weight_decay < 0:
        raise InvalidInputError(f"weight decay must be non-negative, got {weight_decay}")
    g = grad + weight_decay * theta if weight_decay else grad
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    bc1 = 1.0 - state.beta1**step
    bc2 = 1.0 - state.beta2**step
    denom = np.sqrt(v) / np.sqrt(bc2) + state.eps
    new_theta = theta - (lr / bc1) * m / denom
    return new_theta, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``theta`` (any shape)."""
    theta = np.array(theta, dtype=float)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"f is not finite around entry {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
