"""Differentiable classifiers for multi-band time series, trained from scratch on numpy."""

from .analysis import (
    attention_summary,
    cohen_kappa,
    extract_embeddings,
    input_gradients,
    leave_one_out_accuracy,
    metrics,
    nearest_neighbor_accuracy,
    pca,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, GeneratorConfig, generate, load, save
from .errors import (
    CompatibilityError,
    ConfigurationError,
    ContractError,
    DimensionError,
    ParseError,
    TrainingDiverged,
    UnsupportedOperation,
)
from .models import ARCHITECTURES, Model, ModelSpec, build, forward
from .train import TrainConfig, fit
from .tune import SearchSpace, run_study

__version__ = "0.1.0"

__all__ = [
    "ARCHITECTURES", "CompatibilityError", "ConfigurationError", "ContractError", "Dataset",
    "DimensionError", "GeneratorConfig", "Model", "ModelSpec", "ParseError", "SearchSpace",
    "TrainConfig", "TrainingDiverged", "UnsupportedOperation", "attention_summary", "build",
    "cohen_kappa", "extract_embeddings", "fit", "forward", "generate", "input_gradients", "leave_one_out_accuracy", "load",
    "load_checkpoint", "metrics", "nearest_neighbor_accuracy", "pca", "run_study", "save",
    "save_checkpoint",
]
