"""Pipeline configuration: a flat JSON document with a ``version`` field."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .cnn.network import PRESET_BLOCKS
from .cnn.train import TrainConfig
from .ensemble import BaggingConfig, TreeConfig
from .errors import ConfigError

CONFIG_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    version: int = CONFIG_VERSION
    input_size: int = 32
    preset: int = 1
    mode: str = "3d"
    slices_per_subject: int = 5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 50
    keep_best: bool = True
    n_bags: int = 50
    max_depth: Optional[int] = 10
    min_samples_split: int = 2
    min_impurity_decrease: float = 0.0
    baselines: bool = True
    knn_k: int = 5
    rvfl_hidden: int = 256
    rvfl_ridge: float = 0.1
    svm_lambda: float = 0.01
    svm_epochs: int = 200
    rf_m_try: Optional[int] = None
    train_fraction: float = 0.70
    seed: int = 0

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"config version {self.version} is not supported (expected {CONFIG_VERSION})")
        if self.preset not in PRESET_BLOCKS:
            raise ConfigError(f"preset {self.preset} does not exist")
        if self.mode not in ("2d", "3d"):
            raise ConfigError(f"mode must be '2d' or '3d', got {self.mode!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.input_size < 2:
            raise ConfigError("input_size must be >= 2")
        if self.slices_per_subject < 1:
            raise ConfigError("slices_per_subject must be >= 1")
        if self.n_bags < 1:
            raise ConfigError("n_bags must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "version" not in data:
            raise ConfigError("config lacks a version field")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def sub_seed(self, stage: int) -> int:
        """Independent seed for a named pipeline stage."""
        return int(np.random.SeedSequence([self.seed, stage]).generate_state(1)[0])

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.momentum, self.batch_size, self.epochs,
                           seed=self.sub_seed(STAGE_SHUFFLE), keep_best=self.keep_best)

    def tree_config(self) -> TreeConfig:
        return TreeConfig(self.max_depth, self.min_samples_split, self.min_impurity_decrease)

    def bagging_config(self) -> BaggingConfig:
        return BaggingConfig(self.n_bags, self.tree_config(), seed=self.sub_seed(STAGE_BAGGING))


STAGE_SPLIT, STAGE_INIT, STAGE_SHUFFLE, STAGE_BAGGING, STAGE_BASELINES = range(5)
