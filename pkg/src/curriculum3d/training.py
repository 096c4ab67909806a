"""Two-stage curriculum training and the single-stage baseline."""

from __future__ import annotations

import copy
import logging
import math
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, NumericalError, ShapeError, TrainingError, UndefinedMetricError
from .metrics import auroc
from .model import ResNet3D, adapt_for_stage2, as_tensor
from .pipeline import BreastSample, augment, sample_patch

log = logging.getLogger(__name__)

DETERMINISM_ENV = "CURRICULUM3D_DETERMINISTIC"


def set_determinism(seed: int) -> None:
    """Seed torch; with ``CURRICULUM3D_DETERMINISTIC`` != "0" also force deterministic kernels."""
    torch.manual_seed(seed)
    if os.environ.get(DETERMINISM_ENV, "1") != "0":
        torch.use_deterministic_algorithms(True)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    lr_stage1: float = 1e-4
    lr_stage2: float = 1e-5
    lr_naive: float = 1e-4
    epochs_stage1: int = 30
    epochs_stage2: int = 30
    early_stop_patience: int = 10
    seed: int = 0
    patch_shape: tuple[int, int, int] = (16, 16, 4)
    patches_per_breast: int = 4
    max_rot_degrees: float = 15.0
    mirror: bool = True
    eval_batch_size: int = 8

    def __post_init__(self):
        object.__setattr__(self, "patch_shape", tuple(int(p) for p in self.patch_shape))
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.lr_stage2 < self.lr_stage1:
            raise ConfigurationError("lr_stage2 must be smaller than lr_stage1")
        if self.patches_per_breast < 1:
            raise ConfigurationError("patches_per_breast must be >= 1")
        if self.early_stop_patience < 1:
            raise ConfigurationError("early_stop_patience must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_shape"] = list(self.patch_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    stage: str
    lr: float
    records: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    selected_epoch: int | None = None
    selection_metric: str = "val_auroc"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(**d)


def cross_entropy(logits: torch.Tensor, labels) -> torch.Tensor:
    target = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    return F.cross_entropy(logits, target)


def train_step(model: ResNet3D, optimizer, x: np.ndarray, y) -> float:
    model.train()
    optimizer.zero_grad()
    loss = cross_entropy(model(as_tensor(x, model)), y)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


@torch.no_grad()
def predict_proba(model: ResNet3D, arrays, batch_size: int = 8) -> np.ndarray:
    """Malignant-class softmax probabilities for a sequence of ``C x X x Y x Z`` arrays."""
    model.eval()
    out = []
    for i in range(0, len(arrays), batch_size):
        x = as_tensor(np.stack(arrays[i:i + batch_size]), model)
        out.append(torch.softmax(model(x), dim=1)[:, 1].double().numpy())
    return np.concatenate(out) if out else np.zeros(0)


def predict(model: ResNet3D, breast: BreastSample) -> float:
    """Malignancy probability of one breast."""
    vol = breast.volume
    if vol.ndim != 4 or vol.shape[0] != model.config.in_channels:
        raise ShapeError(f"expected {model.config.in_channels} x X x Y x Z, got {vol.shape}")
    return float(predict_proba(model, [vol])[0])


def _eval_loss(model, arrays, labels, batch_size) -> tuple[float, float | None]:
    probs = predict_proba(model, arrays, batch_size)
    y = np.asarray(labels, dtype=bool)
    p = np.clip(np.where(y, probs, 1.0 - probs), 1e-12, 1.0)
    loss = float(-np.log(p).mean()) if len(p) else float("nan")
    try:
        score = auroc(probs, y)
    except UndefinedMetricError:
        score = None
    return loss, score


def _fit(model, make_epoch, val_arrays, val_labels, lr, epochs, patience, stage, config):
    """Shared epoch loop with checkpoint selection on validation AUROC (loss fallback)."""
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    history = TrainHistory(stage=stage, lr=lr)
    if not len(val_labels):
        warnings.warn(f"{stage}: empty validation set; keeping the last epoch")
        history.selection_metric = "last_epoch"
    elif len(set(bool(v) for v in val_labels)) < 2:
        warnings.warn(f"{stage}: validation AUROC undefined (single class); selecting by loss")
        history.selection_metric = "val_loss"
    best_key, best_state, since_best = None, None, 0
    t0 = time.perf_counter()
    for epoch in range(epochs):
        xs, ys = make_epoch(epoch)
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(len(xs))
        losses = []
        for b in range(0, len(order), config.batch_size):
            idx = order[b:b + config.batch_size]
            loss = train_step(model, optimizer, np.stack([xs[i] for i in idx]), [ys[i] for i in idx])
            if not math.isfinite(loss):
                raise NumericalError(
                    f"{stage}: non-finite loss at epoch {epoch}, batch {b // config.batch_size}")
            losses.append(loss)
        if len(val_labels):
            val_loss, val_auc = _eval_loss(model, val_arrays, val_labels, config.eval_batch_size)
        else:
            val_loss, val_auc = None, None
        history.records.append({"stage": stage, "epoch": epoch, "train_loss": float(np.mean(losses)),
                                "val_loss": val_loss, "val_auroc": val_auc})
        log.info("%s epoch %d train %.4f val %s auroc %s", stage, epoch, np.mean(losses),
                 val_loss, val_auc)
        # lower validation loss breaks AUROC ties
        if val_loss is None:
            key = (epoch,)
        elif val_auc is None:
            key = (-val_loss,)
        else:
            key = (val_auc, -val_loss)
        if best_key is None or key > best_key:
            best_key, best_state, since_best = key, copy.deepcopy(model.state_dict()), 0
            history.selected_epoch = epoch
        else:
            since_best += 1
            if since_best >= patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    history.wall_time = time.perf_counter() - t0
    return model, history


def _check_classes(breasts, stage):
    labels = {b.label for b in breasts}
    if len(labels) < 2:
        warnings.warn(f"{stage}: training set has a single class ({labels})")


def stage1_patches(breasts, config: TrainConfig, epoch: int, augmenting: bool = True,
                   stream: int = 1):
    """Patches for one epoch: ``patches_per_breast`` per lesion-bearing breast."""
    patches = []
    for i, b in enumerate(breasts):
        if not b.lesions:
            continue
        rng = np.random.default_rng([config.seed, stream, epoch, i])
        src = augment(b, rng, config.max_rot_degrees, config.mirror) if augmenting else b
        for _ in range(config.patches_per_breast):
            patches.append(sample_patch(src, config.patch_shape, rng))
    return patches


def train_stage1(model: ResNet3D, train_breasts, val_breasts, config: TrainConfig):
    """Patch-level pretraining on windows around lesion centerpoints."""
    if model.stage_mode != "patch":
        raise TrainingError("stage 1 needs a patch-mode model")
    lesion_breasts = [b for b in train_breasts if b.lesions]
    if not lesion_breasts:
        raise TrainingError("no lesion-bearing breasts in the training set")
    set_determinism(config.seed)
    val = stage1_patches(val_breasts, config, 0, augmenting=False, stream=99)

    def make_epoch(epoch):
        ps = stage1_patches(lesion_breasts, config, epoch)
        return [p.patch for p in ps], [p.label for p in ps]

    return _fit(model, make_epoch, [p.patch for p in val], [p.label for p in val],
                config.lr_stage1, config.epochs_stage1, config.early_stop_patience, "stage1", config)


def _whole_volume(model, train_breasts, val_breasts, config, lr, stage):
    if not train_breasts:
        raise TrainingError("empty training set")
    _check_classes(train_breasts, stage)
    set_determinism(config.seed + 1)

    def make_epoch(epoch):
        xs, ys = [], []
        for i, b in enumerate(train_breasts):
            rng = np.random.default_rng([config.seed, 2, epoch, i])
            a = augment(b, rng, config.max_rot_degrees, config.mirror)
            xs.append(a.volume)
            ys.append(a.label)
        return xs, ys

    epochs = config.epochs_stage2
    return _fit(model, make_epoch, [b.volume for b in val_breasts], [b.label for b in val_breasts],
                lr, epochs, config.early_stop_patience, stage, config)


def train_stage2(model: ResNet3D, train_breasts, val_breasts, config: TrainConfig):
    """Whole-breast fine-tuning of every parameter; adapts the model if needed."""
    if model.stage_mode == "patch":
        adapt_for_stage2(model)
    return _whole_volume(model, train_breasts, val_breasts, config, config.lr_stage2, "stage2")


def train_naive(model: ResNet3D, train_breasts, val_breasts, config: TrainConfig):
    """Baseline: whole-breast training from random initialization, no patch stage."""
    if model.stage_mode == "patch":
        adapt_for_stage2(model)
    return _whole_volume(model, train_breasts, val_breasts, config, config.lr_naive, "naive")


def train_curriculum(model: ResNet3D, train_breasts, val_breasts, config: TrainConfig):
    model, h1 = train_stage1(model, train_breasts, val_breasts, config)
    model, h2 = train_stage2(model, train_breasts, val_breasts, config)
    return model, [h1, h2]
