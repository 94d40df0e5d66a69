"""Experiment configuration: a JSON document validated against the bundled schema."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .data import GeneratorConfig
from .errors import ConfigurationError
from .train import TrainConfig

SECTIONS = ("data", "model", "train", "tune", "analysis")

DEFAULT_MODEL = {"architecture": "transformer", "hidden_dim": 32, "num_layers": 2, "num_heads": 2}
DEFAULT_TUNE = {"budget_trials": 8, "sampler": "kde", "rungs": [10, 20, 40, 60], "parallelism": 1}
DEFAULT_ANALYSIS = {"partition": "test", "num_samples": 100, "correct_only": False, "layer_index": -1,
                    "components": 2}


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    tune: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigurationError(f"config {where}: {exc.message}") from exc
        return cls(**{k: dict(doc.get(k, {})) for k in SECTIONS}, seed=int(doc.get("seed", 0)))

    @classmethod
    def load(cls, path: Optional[str]) -> "ExperimentConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {"seed": self.seed, **{k: getattr(self, k) for k in SECTIONS}}

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is not None:
            self.seed = int(seed)
        return self

    @property
    def mode(self) -> str:
        return self.data.get("mode", "preprocessed")

    def generator(self) -> GeneratorConfig:
        kw = {k: v for k, v in self.data.items() if k != "mode"}
        for key in ("grid", "class_weights"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return GeneratorConfig(**kw, seed=self.seed)

    def model_fields(self) -> dict:
        return {**DEFAULT_MODEL, **self.model} if "architecture" not in self.model else dict(self.model)

    def train_config(self) -> TrainConfig:
        kw = dict(self.train)
        arch = self.model_fields()["architecture"]
        if arch == "transformer":
            kw.setdefault("scheduler", "warmup")
        return TrainConfig(**kw, seed=self.seed).validate()

    def tune_settings(self) -> dict:
        return {**DEFAULT_TUNE, **self.tune}

    def analysis_settings(self) -> dict:
        return {**DEFAULT_ANALYSIS, **self.analysis}
