"""Patient-level cross-validation, report aggregation and class activation maps."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .errors import StageError, UndefinedMetricError
from .metrics import accuracy, auroc, mean_std, roc_curve
from .model import ModelConfig, ResNet3D, as_tensor, build_model, count_parameters
from .pipeline import BreastSample, resample_volume
from .training import TrainConfig, predict_proba, train_curriculum, train_naive

METHODS = ("curriculum", "naive")


@dataclass
class FoldSplit:
    fold_index: int
    train_patients: list[str]
    val_patients: list[str]
    test_patients: list[str]

    def to_dict(self) -> dict:
        return asdict(self)


def make_folds(patient_ids, k: int = 5, val_fraction_of_trainval: float = 0.2,
               seed: int = 0) -> list[FoldSplit]:
    """k patient-level folds; each patient is tested exactly once.

    The non-test patients of a fold are split into train/val with
    ``val_fraction_of_trainval`` going to validation (64/16/20 for k=5).
    """
    ids = sorted(set(patient_ids))
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the number of patients ({len(ids)})")
    shuffled = [ids[i] for i in np.random.default_rng(seed).permutation(len(ids))]
    parts = np.array_split(np.arange(len(ids)), k)
    folds = []
    for i, part in enumerate(parts):
        test = [shuffled[j] for j in part]
        test_set = set(test)
        rest = [p for p in shuffled if p not in test_set]
        perm = np.random.default_rng([seed, i]).permutation(len(rest))
        n_val = int(round(val_fraction_of_trainval * len(rest)))
        val = sorted(rest[j] for j in perm[:n_val])
        train = sorted(rest[j] for j in perm[n_val:])
        folds.append(FoldSplit(i, train, val, sorted(test)))
    return folds


def split_breasts_by_fold(breasts, fold: FoldSplit):
    """Partition breast samples into (train, val, test) following the patient split."""
    where = {}
    for name in ("train", "val", "test"):
        for pid in getattr(fold, f"{name}_patients"):
            where[pid] = name
    out = {"train": [], "val": [], "test": []}
    for b in sorted(breasts, key=lambda b: b.key):
        out[where[b.patient_id]].append(b)
    return out["train"], out["val"], out["test"]


def fold_configs(model_config: ModelConfig, train_config: TrainConfig, fold_index: int):
    """Per-fold configs; randomness derives from (seed, fold_index)."""
    seed = train_config.seed * 1000 + fold_index
    return (replace(model_config, init_seed=model_config.init_seed * 1000 + fold_index),
            replace(train_config, seed=seed))


def train_method(method: str, model_config: ModelConfig, train_config: TrainConfig, train, val):
    """Build a fresh model and train it with ``method``; returns (model, histories)."""
    model = build_model(model_config)
    if method == "curriculum":
        return train_curriculum(model, train, val, train_config)
    if method == "naive":
        model, h = train_naive(model, train, val, train_config)
        return model, [h]
    raise ValueError(f"unknown method {method!r}")


def score_fold(model: ResNet3D, test, fold_index: int, batch_size: int = 8) -> dict:
    """Test-set metrics and predictions for one fold."""
    test = sorted(test, key=lambda b: b.key)
    scores = predict_proba(model, [b.volume for b in test], batch_size)
    labels = np.array([b.label for b in test], dtype=bool)
    entry = {"fold": fold_index, "n_test": len(test), "flagged": False,
             "accuracy": accuracy(scores, labels) if len(test) else None,
             "auroc": None, "roc_points": []}
    try:
        entry["auroc"] = auroc(scores, labels)
        entry["roc_points"] = [list(p) for p in roc_curve(scores, labels)]
    except UndefinedMetricError:
        entry["flagged"] = True
        warnings.warn(f"fold {fold_index}: single-class test set, excluded from AUROC aggregation")
    entry["predictions"] = [
        {"patient_id": b.patient_id, "side": b.side, "label": bool(b.label), "score": float(s)}
        for b, s in zip(test, scores)
    ]
    return entry


def aggregate(folds: list[dict]) -> dict:
    aurocs = [f["auroc"] for f in folds if not f["flagged"] and f["auroc"] is not None]
    accs = [f["accuracy"] for f in folds if f["accuracy"] is not None]
    a_mean, a_std = mean_std(aurocs)
    c_mean, c_std = mean_std(accs)
    return {"auroc_mean": a_mean, "auroc_std": a_std, "accuracy_mean": c_mean,
            "accuracy_std": c_std, "n_folds_auroc": len(aurocs)}


@dataclass
class EvalReport:
    parameter_count: int
    methods: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    k: int = 5
    std_convention: str = "population"
    format_version: int = 1

    def add_method(self, method: str, folds: list[dict]) -> None:
        folds = sorted(folds, key=lambda f: f["fold"])
        self.methods[method] = {"folds": folds, "aggregate": aggregate(folds)}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def roc_rows(self, method: str) -> list[tuple]:
        rows = []
        for f in self.methods[method]["folds"]:
            rows.extend((f["fold"], *p) for p in f["roc_points"])
        return rows

    def table(self) -> str:
        lines = [f"{'method':<12} {'AUROC':>15} {'Accuracy':>15} {'#Parameters':>12}"]
        for m, r in self.methods.items():
            a = r["aggregate"]
            lines.append(f"{m:<12} {a['auroc_mean']:.2f} +/- {a['auroc_std']:.2f}   "
                         f"{a['accuracy_mean']:.2f} +/- {a['accuracy_std']:.2f}   "
                         f"{self.parameter_count / 1e6:>10.2f}M")
        return "\n".join(lines)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["parameter_count", "methods", "config", "k", "std_convention", "format_version"],
    "properties": {
        "parameter_count": {"type": "integer", "minimum": 1},
        "k": {"type": "integer", "minimum": 2},
        "std_convention": {"enum": ["population"]},
        "format_version": {"const": 1},
        "config": {"type": "object"},
        "methods": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["folds", "aggregate"],
                "properties": {
                    "aggregate": {
                        "type": "object",
                        "required": ["auroc_mean", "auroc_std", "accuracy_mean", "accuracy_std"],
                    },
                    "folds": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["fold", "auroc", "accuracy", "flagged", "roc_points",
                                         "predictions"],
                            "properties": {
                                "auroc": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                                "accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                                "roc_points": {"type": "array",
                                               "items": {"type": "array", "minItems": 3,
                                                         "maxItems": 3}},
                            },
                        },
                    },
                },
            },
        },
    },
}


def evaluate_cv(breasts, model_config: ModelConfig, train_config: TrainConfig, k: int = 5,
                methods=METHODS, seed: int = 0, folds=None, return_models: bool = False):
    """Cross-validated training and testing of each method.

    ``folds`` restricts the run to a subset of fold indices (all by default).
    """
    breasts = sorted(breasts, key=lambda b: b.key)
    splits = make_folds([b.patient_id for b in breasts], k, seed=seed)
    run = splits if folds is None else [splits[i] for i in folds]
    report = EvalReport(parameter_count=count_parameters(build_model(model_config)), k=k,
                        config={"model": model_config.to_dict(), "train": train_config.to_dict(),
                                "k": k, "seed": seed, "methods": list(methods)})
    models = {}
    for method in methods:
        entries = []
        for split in run:
            train, val, test = split_breasts_by_fold(breasts, split)
            mcfg, tcfg = fold_configs(model_config, train_config, split.fold_index)
            model, _ = train_method(method, mcfg, tcfg, train, val)
            entries.append(score_fold(model, test, split.fold_index, train_config.eval_batch_size))
            models[(method, split.fold_index)] = model
        report.add_method(method, entries)
    return (report, models) if return_models else report


def cam_raw(model: ResNet3D, volume: np.ndarray, class_index: int) -> np.ndarray:
    """Class-weighted sum of final-stage feature maps (no rectification, no resampling)."""
    with torch.no_grad():
        model.eval()
        feats = model.features(as_tensor(volume[None], model))[0]
        w = model.fc.weight[class_index]
        return torch.einsum("c,cxyz->xyz", w, feats).double().numpy()


def class_activation_map(model: ResNet3D, breast: BreastSample, class_index: int = 1) -> np.ndarray:
    """Heatmap over the breast volume, rectified and max-normalized to [0, 1]."""
    if model.stage_mode != "whole_volume":
        raise StageError("class activation maps need a model adapted for whole volumes")
    if not 0 <= class_index < model.config.n_classes:
        raise ValueError(f"class_index {class_index} out of range")
    model.check_input(as_tensor(breast.volume[None], model))
    cam = np.maximum(cam_raw(model, breast.volume, class_index), 0.0)
    spatial = breast.volume.shape[1:]
    if cam.shape != spatial:
        cam = _upsample(cam, spatial)
    peak = cam.max()
    return (cam / peak if peak > 0 else np.zeros_like(cam)).astype(np.float32)


def _upsample(cam: np.ndarray, spatial) -> np.ndarray:
    # resample_volume needs >= 2 voxels per source axis; repeat singleton axes
    reps = [2 if n == 1 else 1 for n in cam.shape]
    cam = np.tile(cam, reps)
    return np.clip(resample_volume(cam[None], spatial)[0], 0.0, None)
