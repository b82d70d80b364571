"""Mini-batch Adam training and the round-and-refit simplification pass."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DomainError, InvalidInputError, NumericalError
from .model import ModelParams, backward_params, forward, init_params, mean_loss, one_hot
from .numkernel import AdamState, adam_step, make_rng

SHUFFLE_STREAM = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 50
    weight_decay: float = 0.0
    simplify: bool = False
    seed: int = 0
    nodes: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise InvalidInputError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise InvalidInputError(f"weight decay must be >= 0, got {self.weight_decay}")
        if self.nodes < 1:
            raise InvalidInputError(f"nodes must be >= 1, got {self.nodes}")


@dataclass
class TrainReport:
    loss_history: list[float]
    final_params: ModelParams
    wall_clock_seconds: float
    initial_params: ModelParams | None = None
    unsimplified_params: ModelParams | None = None
    finetune_epochs: int = 0


def round_half_away(w: np.ndarray) -> np.ndarray:
    """Nearest integer, ties away from zero."""
    return np.sign(w) * np.floor(np.abs(w) + 0.5)


def _check_dataset(dataset: Dataset, params: ModelParams | None = None) -> None:
    if len(dataset) == 0:
        raise InvalidInputError("dataset is empty")
    if not np.all(dataset.features > 0):
        col = int(np.argwhere(~(dataset.features > 0))[0, 1])
        raise DomainError(
            f"feature '{dataset.feature_names[col]}' has non-positive values; normalise the dataset first"
        )
    if params is not None and (params.n != dataset.n or params.l != dataset.l):
        raise InvalidInputError(
            f"model expects {params.n} features / {params.l} alternatives, dataset has {dataset.n} / {dataset.l}"
        )


def _run_epochs(
    params: ModelParams,
    dataset: Dataset,
    config: TrainConfig,
    rng: np.random.Generator,
    train_w1: bool = True,
) -> list[float]:
    """Run ``config.epochs`` of shuffled mini-batch Adam, mutating ``params`` in place."""
    x = dataset.features
    log_x = np.log(x)
    y = one_hot(dataset.labels, dataset.l)
    N = len(dataset)
    names = ("w1", "w2", "b2") if train_w1 else ("w2", "b2")
    states = {name: AdamState.zeros_like(getattr(params, name)) for name in names}
    history = []
    for epoch in range(config.epochs):
        perm = rng.permutation(N)
        total = 0.0
        for start in range(0, N, config.batch_size):
            idx = perm[start : start + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    trace = forward(params, x[idx], log_x=log_x[idx])
            except InvalidInputError as exc:
                raise NumericalError(f"non-finite utilities at epoch {epoch + 1}: {exc}") from exc
            yb = y[idx]
            total += mean_loss(trace, yb) * idx.size
            grads = dict(zip(("w1", "w2", "b2"), backward_params(params, trace, yb)))
            for name in names:
                new, states[name] = adam_step(
                    getattr(params, name), grads[name], states[name], config.learning_rate, config.weight_decay
                )
                setattr(params, name, new)
        epoch_loss = total / N
        if not np.isfinite(epoch_loss) or not all(np.all(np.isfinite(getattr(params, n))) for n in names):
            raise NumericalError(f"non-finite loss or parameters at epoch {epoch + 1}")
        history.append(epoch_loss)
    return history


def train(dataset: Dataset, config: TrainConfig, init: ModelParams | None = None) -> TrainReport:
    """Fit the model to a normalised dataset.

    Parameters are initialised from ``config.seed`` unless ``init`` is given.
    Each epoch draws a fresh permutation from a seeded shuffle stream; the
    final batch of an epoch may be short. With ``config.simplify`` the
    exponent layer is then rounded, frozen, and the output layer refitted.
    """
    _check_dataset(dataset, init)
    t0 = time.perf_counter()
    if init is None:
        params = init_params(dataset.n, config.nodes, dataset.l, config.seed, dataset.feature_names, dataset.alt_names)
    else:
        params = init.copy()
    initial = params.copy()
    rng = make_rng(config.seed, SHUFFLE_STREAM)
    history = _run_epochs(params, dataset, config, rng)
    unsimplified = None
    finetune = 0
    if config.simplify:
        unsimplified = params.copy()
        params, ft_history = _simplify(params, dataset, config)
        history += ft_history
        finetune = len(ft_history)
    return TrainReport(history, params, time.perf_counter() - t0, initial, unsimplified, finetune)


def _simplify(params: ModelParams, dataset: Dataset, config: TrainConfig) -> tuple[ModelParams, list[float]]:
    _check_dataset(dataset, params)
    out = params.copy()
    out.w1 = round_half_away(out.w1)
    frozen = out.w1.copy()
    rng = make_rng(config.seed, SHUFFLE_STREAM + 1)
    history = _run_epochs(out, dataset, config, rng, train_w1=False)
    assert np.array_equal(out.w1, frozen)
    return out, history


def simplify_and_finetune(params: ModelParams, dataset: Dataset, config: TrainConfig) -> ModelParams:
    """Round exponents to integers, freeze them, and retrain w2/b2 with a fresh Adam state."""
    return _simplify(params, dataset, config)[0]


def write_loss_history(path: str | Path, history: list[float]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history, start=1):
            w.writerow([i, repr(float(loss))])
