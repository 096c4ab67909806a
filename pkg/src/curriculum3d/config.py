"""Experiment configuration: one JSON file drives the whole pipeline."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .model import ModelConfig
from .phantom import PhantomConfig
from .training import TrainConfig

OUTPUT_ROOT_ENV = "CURRICULUM3D_OUTPUT_ROOT"


@dataclass(frozen=True)
class PreprocessConfig:
    air_threshold_fraction: float = 0.05
    # per-breast (x, y, z) after cropping; None keeps the cropped geometry
    breast_shape: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.breast_shape is not None:
            object.__setattr__(self, "breast_shape", tuple(int(v) for v in self.breast_shape))
        if not 0.0 <= self.air_threshold_fraction < 1.0:
            raise ConfigurationError("air_threshold_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class EvalConfig:
    k: int = 5
    seed: int = 0
    methods: tuple[str, ...] = ("curriculum", "naive")
    # subset of fold indices to run; None runs all k
    folds: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.folds is not None:
            object.__setattr__(self, "folds", tuple(int(f) for f in self.folds))
            if any(not 0 <= f < self.k for f in self.folds):
                raise ConfigurationError(f"folds {self.folds} outside [0, {self.k})")
        if not self.methods or any(m not in ("curriculum", "naive") for m in self.methods):
            raise ConfigurationError(f"methods must be a non-empty subset of curriculum/naive, got {self.methods}")
        if self.k < 2:
            raise ConfigurationError("k must be >= 2")

    @property
    def fold_indices(self) -> tuple[int, ...]:
        return tuple(range(self.k)) if self.folds is None else self.folds


@dataclass(frozen=True)
class ExperimentConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.model.in_channels != self.phantom.n_channels:
            raise ConfigurationError(
                f"model.in_channels={self.model.in_channels} but the phantom has "
                f"{self.phantom.n_channels} channels")
        if self.model.patch_shape != self.train.patch_shape:
            raise ConfigurationError("model.patch_shape must equal train.patch_shape")

    @property
    def output_path(self) -> Path:
        p = Path(self.output_dir)
        if not p.is_absolute() and os.environ.get(OUTPUT_ROOT_ENV):
            p = Path(os.environ[OUTPUT_ROOT_ENV]) / p
        return p

    def to_dict(self) -> dict:
        return {
            "phantom": self.phantom.to_dict(),
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "preprocess": asdict(self.preprocess),
            "eval": asdict(self.eval),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"phantom", "model", "train", "preprocess", "eval", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        try:
            return cls(
                phantom=PhantomConfig(**d.get("phantom", {})),
                model=ModelConfig(**d.get("model", {})),
                train=TrainConfig(**d.get("train", {})),
                preprocess=PreprocessConfig(**d.get("preprocess", {})),
                eval=EvalConfig(**d.get("eval", {})),
                output_dir=d.get("output_dir", "runs/experiment"),
            )
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def desk_preset(**overrides) -> dict:
    """Small CPU-friendly experiment: 64x64x16 volumes, 16x16x4 patches."""
    d = {
        "phantom": {"n_patients": 60, "volume_shape": [64, 64, 16],
                    "lesion_radius_range": [2.0, 3.0], "noise_sigma": 0.02, "seed": 0},
        "model": {"base_width": 8, "block_widths": [8, 16, 32, 64],
                  "stage_strides": [[1, 1, 1], [2, 2, 1], [2, 2, 1], [1, 1, 1]],
                  "patch_shape": [16, 16, 4]},
        "train": {"patch_shape": [16, 16, 4], "patches_per_breast": 32, "epochs_stage1": 40,
                  "epochs_stage2": 30, "early_stop_patience": 15},
        "eval": {"k": 5, "seed": 0, "methods": ["curriculum", "naive"]},
        "output_dir": "runs/desk",
    }
    for key, value in overrides.items():
        if isinstance(value, dict):
            d.setdefault(key, {}).update(value)
        else:
            d[key] = value
    return d


def paper_preset() -> dict:
    """Paper geometry: 512x512x32 volumes, 256x256x32 breasts, 64x64x4 patches, ~2.1M parameters."""
    return {
        "phantom": {"n_patients": 408, "volume_shape": [512, 512, 32],
                    "lesion_radius_range": [4.0, 10.0], "seed": 0},
        "model": {},
        "train": {"patch_shape": [64, 64, 4], "epochs_stage1": 100, "epochs_stage2": 100},
        "eval": {"k": 5, "seed": 0, "methods": ["curriculum", "naive"]},
        "output_dir": "runs/paper",
    }
