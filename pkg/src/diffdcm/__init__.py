"""Interpretable discrete choice models learned with a differentiable log/exp network."""

__version__ = "0.1.0"

from .data import Dataset, SyntheticSpec, load_csv, normalize, synthesize, train_test_split
from .errors import DiffDCMError
from .model import ModelParams, forward
from .training import TrainConfig, train

__all__ = [
    "Dataset",
    "DiffDCMError",
    "ModelParams",
    "SyntheticSpec",
    "TrainConfig",
    "__version__",
    "forward",
    "load_csv",
    "normalize",
    "synthesize",
    "train",
    "train_test_split",
]
