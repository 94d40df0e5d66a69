"""Small reference configurations for desk-scale runs on the default synthetic dataset."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .data import Dataset
from .models import Model, ModelSpec, build
from .train import FitResult, TrainConfig, fit

REFERENCE_ARCHITECTURES = ("lstm_rnn", "transformer", "tempcnn", "msresnet")

REFERENCE_SPECS = {
    "lstm_rnn": {"hidden_dim": 32, "num_layers": 1},
    "transformer": {"hidden_dim": 32, "num_layers": 2, "num_heads": 2},
    "tempcnn": {"hidden_dim": 16, "kernel_size": 5},
    "msresnet": {"hidden_dim": 16},
    "softattn_gru": {"hidden_dim": 32},
}

REFERENCE_TRAIN = {
    "lstm_rnn": {"learning_rate": 3e-3},
    "transformer": {"scheduler": "warmup", "n_warmup": 100},
    "tempcnn": {"learning_rate": 3e-3},
    "msresnet": {"learning_rate": 3e-3},
    "softattn_gru": {"learning_rate": 3e-3},
}

# three attention blocks, so that the layer-wise embedding comparison has depth to work with
EMBEDDING_SPEC = {"num_layers": 3}


@dataclass
class ReferenceRun:
    architecture: str
    mode: str
    seed: int
    model: Model
    result: FitResult
    seconds: float


def reference_spec(architecture: str, dataset: Dataset, mode: str, overrides=None) -> ModelSpec:
    kw = {**REFERENCE_SPECS[architecture], **(overrides or {})}
    return ModelSpec(architecture, input_dim=13, num_classes=dataset.num_classes,
                     seq_len=dataset.nominal_length(mode), **kw).validate()


def train_reference(dataset: Dataset, architecture: str, mode: str, seed: int = 0,
                    max_epochs: int = 60, log_path=None, overrides=None) -> ReferenceRun:
    """Fit the reference model with early stopping; the best-kappa weights are kept.

    ``overrides`` replaces fields of the reference spec, e.g. ``EMBEDDING_SPEC``.
    """
    x_tr, y_tr, _ = dataset.tensors(mode, "train")
    x_va, y_va, _ = dataset.tensors(mode, "val")
    model = build(reference_spec(architecture, dataset, mode, overrides), seed)
    config = TrainConfig(seed=seed, max_epochs=max_epochs, **REFERENCE_TRAIN[architecture])
    start = time.perf_counter()
    result = fit(model, (x_tr, y_tr), (x_va, y_va), config, log_path=log_path)
    return ReferenceRun(architecture, mode, seed, result.model, result, time.perf_counter() - start)
