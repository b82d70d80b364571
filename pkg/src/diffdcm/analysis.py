"""Gradient-based analyses: average marginal utility, intervention paths, prediction metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EPSILON, SCALE, Dataset, Normalization
from .errors import InvalidInputError
from .model import ModelParams, batch_input_gradients, forward, grad_wrt_input
from .numkernel import PROB_FLOOR


@dataclass
class SensitivityReport:
    matrix: np.ndarray  # (l, n): mean over samples of dV_k/dx_i
    mean_abs: np.ndarray  # (n,): mean over alternatives of |matrix[:, i]|
    feature_names: list[str]
    alt_names: list[str]
    raw_matrix: np.ndarray | None = None  # same, per raw (unnormalised) feature unit


def average_marginal_utility(
    params: ModelParams, dataset: Dataset, chunk: int = 4096
) -> SensitivityReport:
    """Average dV_k/dx_i over every sample, in the normalised feature space.

    When the dataset carries a normalisation record, ``raw_matrix`` rescales
    by d(normalised)/d(raw) = scale / (max - min).
    """
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    total = np.zeros((params.l, params.n))
    for start in range(0, len(dataset), chunk):
        total += batch_input_gradients(params, dataset.features[start : start + chunk]).sum(axis=0)
    mat = total / len(dataset)
    raw = None
    norm = dataset.normalization
    if norm is not None:
        span = norm.maxs - norm.mins
        factor = np.where(span > 0, norm.scale / np.where(span > 0, span, 1.0), 0.0)
        raw = mat * factor
    return SensitivityReport(mat, np.abs(mat).mean(axis=0), list(params.feature_names), list(params.alt_names), raw)


@dataclass
class InterventionConfig:
    target_alt: int  # 1-based
    gamma: float = 0.05
    steps: int = 100
    clamp_low: float = EPSILON
    clamp_high: float = SCALE
    early_stop_prob: float | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidInputError(f"gamma must be positive, got {self.gamma}")
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if not self.clamp_low < self.clamp_high:
            raise InvalidInputError("clamp_low must be below clamp_high")


@dataclass
class InterventionPath:
    states: np.ndarray  # (T+1, n)
    probs: np.ndarray  # (T+1, l)
    converged: bool
    target_alt: int = 1


def intervention_path(params: ModelParams, x0: np.ndarray, cfg: InterventionConfig) -> InterventionPath:
    """Gradient descent on the cross-entropy towards ``cfg.target_alt``, moving x.

    Each step is x <- clip(x - gamma * dL/dx, clamp_low, clamp_high).
    """
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    if x.size != params.n:
        raise InvalidInputError(f"x0 has {x.size} features, model expects {params.n}")
    if np.any(x < cfg.clamp_low) or np.any(x > cfg.clamp_high):
        raise InvalidInputError(f"x0 must lie within [{cfg.clamp_low}, {cfg.clamp_high}]")
    if not 1 <= cfg.target_alt <= params.l:
        raise InvalidInputError(f"target alternative {cfg.target_alt} out of range 1..{params.l}")
    y = np.zeros(params.l)
    y[cfg.target_alt - 1] = 1.0
    states = [x.copy()]
    probs = [forward(params, x).p[0]]
    for _ in range(cfg.steps):
        if cfg.early_stop_prob is not None and probs[-1][cfg.target_alt - 1] > cfg.early_stop_prob:
            break
        x = np.clip(x - cfg.gamma * grad_wrt_input(params, x, y=y), cfg.clamp_low, cfg.clamp_high)
        states.append(x.copy())
        probs.append(forward(params, x).p[0])
    probs_arr = np.array(probs)
    converged = int(np.argmax(probs_arr[-1])) + 1 == cfg.target_alt
    return InterventionPath(np.array(states), probs_arr, converged, cfg.target_alt)


def predict_choices(p: np.ndarray) -> np.ndarray:
    """1-based argmax per row; np.argmax already returns the lowest index on ties."""
    return np.argmax(p, axis=1) + 1


def metrics_from_probs(p: np.ndarray, labels: np.ndarray) -> dict:
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise InvalidInputError("dataset is empty")
    choices = predict_choices(p)
    chosen = p[np.arange(labels.size), labels - 1]
    return {
        "accuracy": float(np.mean(choices == labels)),
        "log_likelihood": float(np.sum(np.log(np.maximum(chosen, PROB_FLOOR)))),
        "n": int(labels.size),
        "choices": choices,
    }


def predict_metrics(params: ModelParams, dataset: Dataset) -> dict:
    """Accuracy, log-likelihood (natural log) and per-sample predicted choices."""
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    return metrics_from_probs(forward(params, dataset.features).p, dataset.labels)


# --- exports --------------------------------------------------------------


def write_sensitivity_csv(path: str | Path, report: SensitivityReport) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["alternative", "feature", "avg_marginal_utility", "mean_abs"]
        if report.raw_matrix is not None:
            header.append("avg_marginal_utility_raw")
        w.writerow(header)
        for k, alt in enumerate(report.alt_names):
            for i, feat in enumerate(report.feature_names):
                row = [alt, feat, repr(float(report.matrix[k, i])), repr(float(report.mean_abs[i]))]
                if report.raw_matrix is not None:
                    row.append(repr(float(report.raw_matrix[k, i])))
                w.writerow(row)


def write_path_csv(path: str | Path, ipath: InterventionPath, feature_names, alt_names) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", *feature_names, *[f"p_{a}" for a in alt_names], "choice"])
        for t, (x, p) in enumerate(zip(ipath.states, ipath.probs)):
            w.writerow([t, *map(repr, map(float, x)), *map(repr, map(float, p)), int(np.argmax(p)) + 1])


def metrics_json(metrics: dict) -> str:
    return json.dumps({k: metrics[k] for k in ("accuracy", "log_likelihood", "n")}, indent=2)
