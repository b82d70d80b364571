"""Choice datasets: CSV ingestion, min-max normalisation, splitting, synthetic
generators and Swissmetro screening."""

from __future__ import annotations

import csv
import gzip
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError, ParseError
from .numkernel import make_rng, stable_softmax

EPSILON = 1e-4
SCALE = 10.0
KINDS = ("linear", "dummy", "nonlinear", "logical")


@dataclass
class Normalization:
    """Per-feature min-max record mapping raw values onto [epsilon, scale]."""

    mins: np.ndarray
    maxs: np.ndarray
    epsilon: float = EPSILON
    scale: float = SCALE

    def __post_init__(self):
        self.mins = np.asarray(self.mins, dtype=float)
        self.maxs = np.asarray(self.maxs, dtype=float)

    def apply(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        span = self.maxs - self.mins
        const = span <= 0
        safe = np.where(const, 1.0, span)
        out = (raw - self.mins) / safe * self.scale
        out = np.where(const, self.scale / 2, out)
        # values outside the fitted range (e.g. a test split) are clipped into the box
        return np.clip(out, self.epsilon, self.scale)

    def invert(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.maxs - self.mins
        return np.where(span > 0, self.mins + x / self.scale * span, self.mins)

    def to_dict(self) -> dict:
        return {
            "min": self.mins.tolist(),
            "max": self.maxs.tolist(),
            "epsilon": self.epsilon,
            "scale": self.scale,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Normalization":
        return cls(obj["min"], obj["max"], obj.get("epsilon", EPSILON), obj.get("scale", SCALE))


@dataclass
class Dataset:
    features: np.ndarray  # (N, n)
    labels: np.ndarray  # (N,) 1-based
    feature_names: list[str] = field(default_factory=list)
    alt_names: list[str] = field(default_factory=list)
    normalization: Normalization | None = None

    def __post_init__(self):
        self.features = np.array(self.features, dtype=float, ndmin=2)
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        N, n = self.features.shape
        if self.labels.size != N:
            raise InvalidInputError(f"{self.labels.size} labels for {N} rows")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(n)]
        if len(self.feature_names) != n:
            raise InvalidInputError(f"{len(self.feature_names)} feature names for {n} columns")
        if not self.alt_names:
            l = int(self.labels.max()) if N else 1
            self.alt_names = [str(k + 1) for k in range(l)]
        if N and (self.labels.min() < 1 or self.labels.max() > len(self.alt_names)):
            raise InvalidInputError(f"labels must lie in 1..{len(self.alt_names)}")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def l(self) -> int:
        return len(self.alt_names)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return replace(self, features=self.features[idx], labels=self.labels[idx])


# --- CSV ------------------------------------------------------------------


def load_csv(
    path: str | Path,
    label_column: str = "choice",
    alt_names: Sequence[str] | None = None,
) -> Dataset:
    """Read a header-first CSV with one row per observation and a 1-based label column."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if label_column not in header:
            raise ParseError(f"{path}: no '{label_column}' column (header: {', '.join(header)})")
        li = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != li]
        rows, labels = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                try:
                    val = float(cell)
                except ValueError:
                    val = math.nan
                if math.isnan(val) or math.isinf(val):
                    raise ParseError(f"{path}: row {r}, column '{header[c]}': bad value {cell!r}")
                vals.append(val)
            lab = vals.pop(li)
            if lab != int(lab) or lab < 1:
                raise ParseError(f"{path}: row {r}: label {row[li]!r} is not an integer >= 1")
            labels.append(int(lab))
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return Dataset(np.array(rows), np.array(labels), names, list(alt_names or []))


def write_csv(ds: Dataset, path: str | Path, label_column: str = "choice") -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*ds.feature_names, label_column])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


# --- normalisation and splitting -----------------------------------------


def fit_normalization(features: np.ndarray, epsilon: float = EPSILON) -> Normalization:
    features = np.asarray(features, dtype=float)
    return Normalization(features.min(axis=0), features.max(axis=0), epsilon)


def normalize(
    ds: Dataset,
    record: Normalization | None = None,
    epsilon: float = EPSILON,
) -> Dataset:
    """Map every feature onto [0, 10] by min-max, then lift values below epsilon to epsilon.

    With ``record`` given (e.g. the training split's), that mapping is reused.
    Constant columns map to 5.0 with a warning.
    """
    if len(ds) == 0:
        raise InvalidInputError("cannot normalise an empty dataset")
    if record is None:
        record = fit_normalization(ds.features, epsilon)
    const = np.flatnonzero(record.maxs - record.mins <= 0)
    if const.size:
        names = ", ".join(ds.feature_names[i] for i in const)
        warnings.warn(f"constant feature(s) mapped to {record.scale / 2}: {names}", stacklevel=2)
    return replace(ds, features=record.apply(ds.features), normalization=record)


def denormalize(ds: Dataset) -> Dataset:
    if ds.normalization is None:
        return ds
    return replace(ds, features=ds.normalization.invert(ds.features), normalization=None)


def is_normalized(ds: Dataset) -> bool:
    return bool(np.all(ds.features > 0))


def train_test_split(
    ds: Dataset,
    train_fraction: float | None = 0.8,
    seed: int = 0,
    counts: tuple[int, int] | None = None,
) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then split.

    ``counts=(n_train, n_test)`` requests exact sizes (they must sum to N);
    otherwise the training size is ``floor(N * train_fraction)``.
    """
    N = len(ds)
    if counts is not None:
        n_train, n_test = counts
        if n_train < 1 or n_test < 1 or n_train + n_test != N:
            raise InvalidInputError(f"split counts {counts} do not partition {N} rows")
    else:
        if train_fraction is None or not 0 < train_fraction < 1:
            raise InvalidInputError(f"train fraction must be in (0, 1), got {train_fraction}")
        n_train = int(math.floor(N * train_fraction + 1e-9))
        if n_train < 1 or n_train >= N:
            raise InvalidInputError(f"split of {N} rows at {train_fraction} is degenerate")
    perm = make_rng(seed).permutation(N)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


# --- synthetic generators -------------------------------------------------


@dataclass
class SyntheticSpec:
    kind: str
    n_train: int = 10000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown synthetic kind '{self.kind}' (choose from {', '.join(KINDS)})")
        if self.n_train < 1 or self.n_test < 1:
            raise InvalidInputError("sample counts must be >= 1")


def true_utilities(kind: str, x: np.ndarray) -> np.ndarray:
    """Ground-truth utilities (N, 3) of the utility-based synthetic generators."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2 = x[:, 0], x[:, 1]
    if kind == "linear":
        cols = (2.0 * x1 - 1.0 * x2, -1.0 * x1 + 2.0 * x2, 1.0 * x1 + 1.0 * x2 - 2.0)
    elif kind == "dummy":
        x3 = x[:, 2]
        cols = (3.0 * x1 - 1.0 * x2, -1.0 * x1 + 3.0 * x2, 1.5 * x1 + 1.5 * x2 + 3.0 * x3)
    elif kind == "nonlinear":
        cols = (
            2.0 * x1**2 - 1.0 * x1 * x2 - 1.0 * x2**2,
            -1.0 * x1**2 - 1.0 * x1 * x2 + 2.0 * x2**2,
            -0.5 * x1**2 + 2.5 * x1 * x2 - 0.5 * x2**2 - 1.0,
        )
    else:
        raise InvalidInputError(f"no utility functions for kind '{kind}'")
    return np.column_stack(cols)


def logical_choice(x: np.ndarray) -> np.ndarray:
    """Quadrant rule: (>=5, >=5) -> 1, (<5, >=5) -> 2, (<5, <5) -> 3, (>=5, <5) -> 4."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    hi1 = x[:, 0] >= 5.0
    hi2 = x[:, 1] >= 5.0
    return np.select([hi1 & hi2, ~hi1 & hi2, ~hi1 & ~hi2], [1, 2, 3], default=4)


def true_probabilities(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "logical":
        lab = logical_choice(x)
        p = np.zeros((lab.size, 4))
        p[np.arange(lab.size), lab - 1] = 1.0
        return p
    return stable_softmax(true_utilities(kind, x))


def sample_labels(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw, one uniform per row; returns 1-based labels."""
    cdf = np.cumsum(p, axis=1)
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1) + 1


def synthesize(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    """Generate raw (train, test) datasets for any of the four synthetic kinds.

    Draw order from the seeded generator: all features, then (dummy only) the
    Bernoulli draws, then one uniform per row for the label. The first
    ``n_train`` rows form the training split. Call :func:`normalize` before
    training.
    """
    rng = make_rng(spec.seed)
    N = spec.n_train + spec.n_test
    x = rng.uniform(0.0, 10.0, size=(N, 2))
    if spec.kind == "dummy":
        x3 = np.where(rng.random(N) < 0.7, 10.0, 0.0)
        x = np.column_stack([x, x3])
    if spec.kind == "logical":
        labels = logical_choice(x)
        alts = 4
    else:
        labels = sample_labels(true_probabilities(spec.kind, x), rng.random(N))
        alts = 3
    names = [f"x{i + 1}" for i in range(x.shape[1])]
    ds = Dataset(x, labels, names, [str(k + 1) for k in range(alts)])
    idx = np.arange(N)
    return ds.subset(idx[: spec.n_train]), ds.subset(idx[spec.n_train :])


def synth_linear(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    return synthesize(replace(spec, kind="linear"))


def synth_dummy(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    return synthesize(replace(spec, kind="dummy"))


def synth_nonlinear(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    return synthesize(replace(spec, kind="nonlinear"))


def synth_logical(spec: SyntheticSpec) -> tuple[Dataset, Dataset]:
    return synthesize(replace(spec, kind="logical"))


# --- Swissmetro -----------------------------------------------------------

SWISSMETRO_ALTS = ["train", "SM", "car"]

# model feature name -> raw column
SWISSMETRO_FEATURES = {
    "T_train": "TRAIN_TT",
    "C_train": "TRAIN_CO",
    "Freq_train": "TRAIN_HE",
    "T_SM": "SM_TT",
    "C_SM": "SM_CO",
    "Freq_SM": "SM_HE",
    "Seats": "SM_SEATS",
    "T_car": "CAR_TT",
    "C_car": "CAR_CO",
    "GA": "GA",
    "Age": "AGE",
    "Luggage": "LUGGAGE",
}

DEFAULT_SWISSMETRO_FILTER = [
    {"column": "CHOICE", "op": "!=", "value": 0},
    {"column": "CAR_AV", "op": "==", "value": 1},
    {"column": "AGE", "op": "!=", "value": 6},
]

_OPS = {
    "==": np.equal,
    "!=": np.not_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "<": np.less,
    "<=": np.less_equal,
}


def read_table(path: str | Path) -> dict[str, np.ndarray]:
    """Read a delimited numeric table (tab, comma or semicolon; optionally gzipped)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", newline="") as fh:
        text = fh.read()
    first = text.split("\n", 1)[0]
    delim = max("\t,;", key=first.count)
    reader = csv.reader(io.StringIO(text), delimiter=delim)
    header = [h.strip() for h in next(reader)]
    rows = [r for r in reader if r]
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric cell ({exc})") from exc
    if arr.ndim != 2 or arr.shape[1] != len(header):
        raise ParseError(f"{path}: ragged rows")
    return {name: arr[:, i] for i, name in enumerate(header)}


def apply_filters(table: dict[str, np.ndarray], predicates: Iterable[dict]) -> np.ndarray:
    """Boolean mask of rows satisfying every predicate {column, op, value}."""
    n_rows = len(next(iter(table.values())))
    mask = np.ones(n_rows, dtype=bool)
    for pred in predicates:
        col, op = pred.get("column"), pred.get("op")
        if col not in table:
            raise ConfigError(f"filter references unknown column '{col}'")
        if op not in _OPS:
            raise ConfigError(f"unknown filter operator '{op}' (use one of {' '.join(_OPS)})")
        mask &= _OPS[op](table[col], float(pred["value"]))
    return mask


def swissmetro_screen(
    table: dict[str, np.ndarray],
    filters: Sequence[dict] | None = None,
    features: dict[str, str] | None = None,
) -> Dataset:
    """Screen a raw Swissmetro table and map it to a (raw, unnormalised) Dataset.

    ``filters=None`` applies :data:`DEFAULT_SWISSMETRO_FILTER`; pass ``[]`` to keep
    every row. Labels are CHOICE (1 train, 2 SM, 3 car).
    """
    filters = DEFAULT_SWISSMETRO_FILTER if filters is None else filters
    features = features or SWISSMETRO_FEATURES
    for col in [*features.values(), "CHOICE"]:
        if col not in table:
            raise ConfigError(f"Swissmetro table lacks column '{col}'")
    mask = apply_filters(table, filters)
    x = np.column_stack([table[col][mask] for col in features.values()])
    labels = table["CHOICE"][mask].astype(int)
    if labels.size and labels.min() < 1:
        raise InvalidInputError("rows with CHOICE=0 survived screening; add a CHOICE != 0 filter")
    return Dataset(x, labels, list(features), list(SWISSMETRO_ALTS))
