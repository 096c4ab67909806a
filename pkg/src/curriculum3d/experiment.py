"""File-level orchestration shared by the CLI: dataset, per-fold runs, reports, CAMs."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .evaluation import EvalReport, class_activation_map, make_folds, score_fold, split_breasts_by_fold, fold_configs, train_method
from .metrics import roc_band
from .model import ModelConfig, adapt_for_stage2, build_model, count_parameters, load_state_arrays, state_arrays
from .phantom import generate_phantom
from .pipeline import prepare_dataset

log = logging.getLogger(__name__)


class LookupFailure(LookupError):
    """Requested patient, side or artifact does not exist."""


def data_dir(cfg: ExperimentConfig) -> Path:
    return cfg.output_path / "data"


def fold_dir(cfg: ExperimentConfig, method: str, fold: int) -> Path:
    return cfg.output_path / "runs" / method / f"fold{fold}"


def write_resolved_config(cfg: ExperimentConfig, directory) -> None:
    Path(directory).mkdir(parents=True, exist_ok=True)
    io.write_json(Path(directory) / "resolved_config.json", cfg.to_dict())


def generate_dataset(cfg: ExperimentConfig, force: bool = False, jobs: int = 1) -> Path:
    out = data_dir(cfg)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
        for p in io.dataset_patient_dirs(out):
            for f in p.iterdir():
                f.unlink()
            p.rmdir()
    cases = generate_phantom(cfg.phantom, jobs=jobs)
    io.save_dataset(cases, out, cfg.phantom)
    write_resolved_config(cfg, out.parent)
    return out


def load_breasts(cfg: ExperimentConfig):
    d = data_dir(cfg)
    if not io.dataset_patient_dirs(d):
        raise FileNotFoundError(f"no dataset at {d}; run `curriculum3d gen-data` first")
    cases = io.load_dataset(d)
    return prepare_dataset(cases, cfg.preprocess.air_threshold_fraction, cfg.preprocess.breast_shape)


def fold_split(cfg: ExperimentConfig, breasts, fold: int):
    splits = make_folds([b.patient_id for b in breasts], cfg.eval.k, seed=cfg.eval.seed)
    if not 0 <= fold < len(splits):
        raise LookupFailure(f"fold {fold} outside [0, {len(splits)})")
    return splits[fold]


def run_fold(cfg: ExperimentConfig, method: str, fold: int, breasts=None) -> Path:
    """Train ``method`` on one fold and write checkpoint, history and resolved config."""
    breasts = load_breasts(cfg) if breasts is None else breasts
    split = fold_split(cfg, breasts, fold)
    train, val, _ = split_breasts_by_fold(breasts, split)
    mcfg, tcfg = fold_configs(cfg.model, cfg.train, fold)
    model, histories = train_method(method, mcfg, tcfg, train, val)
    out = fold_dir(cfg, method, fold)
    out.mkdir(parents=True, exist_ok=True)
    hist = [h.to_dict() for h in histories]
    io.save_checkpoint(out / "checkpoint.npz", state_arrays(model), {
        "model_config": mcfg.to_dict(), "stage_mode": model.stage_mode, "method": method,
        "fold": fold, "train_config": tcfg.to_dict(), "history": hist,
    })
    io.write_json(out / "history.json", hist)
    io.write_json(out / "split.json", split.to_dict())
    write_resolved_config(cfg, out)
    return out


def _run_fold_job(args):
    cfg_dict, method, fold = args
    run_fold(ExperimentConfig.from_dict(cfg_dict), method, fold)
    return method, fold


def load_fold_model(path):
    arrays, meta = io.load_checkpoint(path)
    model = build_model(ModelConfig.from_dict(meta["model_config"]))
    if meta["stage_mode"] == "whole_volume":
        adapt_for_stage2(model)
    load_state_arrays(model, arrays)
    model.eval()
    return model, meta


def missing_folds(cfg: ExperimentConfig) -> list[tuple[str, int]]:
    return [(m, f) for m in cfg.eval.methods for f in cfg.eval.fold_indices
            if not (fold_dir(cfg, m, f) / "checkpoint.npz").is_file()]


def evaluate_checkpoints(cfg: ExperimentConfig, train_missing: bool = False, jobs: int = 1) -> EvalReport:
    """Score all fold checkpoints on their test patients and write the report files."""
    missing = missing_folds(cfg)
    if missing and not train_missing:
        listing = ", ".join(f"{m}/fold{f}" for m, f in missing)
        raise LookupFailure(f"missing checkpoints: {listing} (use --train-missing)")
    breasts = load_breasts(cfg)
    if missing:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                list(ex.map(_run_fold_job, [(cfg.to_dict(), m, f) for m, f in missing]))
        else:
            for m, f in missing:
                run_fold(cfg, m, f, breasts)
    # the report sits inside output_dir; leaving the path out keeps reruns elsewhere byte-identical
    config = {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}
    report = EvalReport(parameter_count=count_parameters(build_model(cfg.model)), k=cfg.eval.k,
                        config=config)
    for method in cfg.eval.methods:
        entries = []
        for fold in cfg.eval.fold_indices:
            model, _ = load_fold_model(fold_dir(cfg, method, fold) / "checkpoint.npz")
            _, _, test = split_breasts_by_fold(breasts, fold_split(cfg, breasts, fold))
            entries.append(score_fold(model, test, fold, cfg.train.eval_batch_size))
        report.add_method(method, entries)
    write_report(report, cfg.output_path / "eval")
    return report


def write_report(report: EvalReport, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_json(d / "report.json", report.to_dict())
    with open(d / "roc.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "fold", "fpr", "tpr", "threshold"])
        for method in report.methods:
            for row in report.roc_rows(method):
                w.writerow([method, *row])
    with open(d / "roc_band.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "fpr", "tpr_mean", "tpr_std"])
        for method, r in report.methods.items():
            curves = [f["roc_points"] for f in r["folds"] if f["roc_points"]]
            if not curves:
                continue
            grid, mean, std = roc_band(curves)
            for row in zip(grid, mean, std):
                w.writerow([method, *(f"{v:.6f}" for v in row)])
    (d / "summary.txt").write_text(report.table() + "\n")


def find_breast(breasts, patient_id: str, side: str):
    for b in breasts:
        if b.patient_id == patient_id and b.side == side:
            return b
    raise LookupFailure(f"no breast {patient_id}:{side} in the dataset")


def export_cam(cfg: ExperimentConfig, patient_id: str, side: str, fold: int | None = None,
               method: str = "curriculum", png: bool = True) -> Path:
    """Heatmap for one breast from the fold checkpoint in which the patient was tested."""
    if side not in ("left", "right"):
        raise LookupFailure(f"side must be left or right, got {side!r}")
    breasts = load_breasts(cfg)
    breast = find_breast(breasts, patient_id, side)
    if fold is None:
        splits = make_folds([b.patient_id for b in breasts], cfg.eval.k, seed=cfg.eval.seed)
        fold = next(s.fold_index for s in splits if patient_id in s.test_patients)
    ckpt = fold_dir(cfg, method, fold) / "checkpoint.npz"
    if not ckpt.is_file():
        raise LookupFailure(f"no checkpoint at {ckpt}; run `curriculum3d train` first")
    model, _ = load_fold_model(ckpt)
    heat = class_activation_map(model, breast, 1)
    out = cfg.output_path / "cam" / f"{patient_id}_{side}"
    io.save_volume_with_sidecar(out, "heatmap", heat, {
        "patient_id": patient_id, "side": side, "fold": fold, "method": method, "class_index": 1,
        "label": bool(breast.label), "lesions": [l.to_dict() for l in breast.lesions],
    })
    if png:
        write_overlays(breast.volume, heat, out / "slices")
    return out


def write_overlays(volume: np.ndarray, heat: np.ndarray, directory, channel: int = 1) -> None:
    """Per-z-slice PNGs: grayscale channel with the heatmap blended in red."""
    from PIL import Image

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    base = volume[min(channel, volume.shape[0] - 1)]
    lo, hi = float(base.min()), float(base.max())
    base = (base - lo) / (hi - lo) if hi > lo else np.zeros_like(base)
    for z in range(base.shape[2]):
        g = base[:, :, z].T
        h = heat[:, :, z].T
        rgb = np.stack([np.clip(g * (1 - h) + h, 0, 1), g * (1 - h), g * (1 - h)], axis=-1)
        Image.fromarray((rgb * 255).astype(np.uint8)).save(d / f"z{z:03d}.png")
