"""On-disk formats: phantom datasets, raw volumes with JSON sidecars, checkpoints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .phantom import LesionAnnotation, PatientCase, PhantomConfig

FORMAT_VERSION = 1


def write_raw(path, array: np.ndarray) -> None:
    """Little-endian float32, C order."""
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def read_raw(path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {data.size}")
    return data.reshape(shape).astype(np.float32)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def save_case(case: PatientCase, directory, config: PhantomConfig | None = None) -> Path:
    d = Path(directory) / case.patient_id
    d.mkdir(parents=True, exist_ok=True)
    write_raw(d / "volume.raw", case.volume)
    meta = {
        "format_version": FORMAT_VERSION,
        "patient_id": case.patient_id,
        "shape": list(case.volume.shape),
        "channel_names": config.channel_names if config else
        [f"c{i}" for i in range(case.volume.shape[0])],
        "lesions": [l.to_dict() for l in case.lesions],
        "left_label": bool(case.left_label),
        "right_label": bool(case.right_label),
        "generator_config": config.to_dict() if config else None,
    }
    write_json(d / "meta.json", meta)
    return d


def load_case(directory) -> PatientCase:
    d = Path(directory)
    meta = read_json(d / "meta.json")
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported format_version {meta.get('format_version')}")
    vol = read_raw(d / "volume.raw", tuple(meta["shape"]))
    lesions = [LesionAnnotation.from_dict(l) for l in meta["lesions"]]
    return PatientCase(meta["patient_id"], vol, lesions, meta["left_label"], meta["right_label"])


def save_dataset(cases, directory, config: PhantomConfig | None = None) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for case in cases:
        save_case(case, root, config)
    return root


def dataset_patient_dirs(directory) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        return []
    return sorted(p for p in root.iterdir() if (p / "meta.json").is_file())


def load_dataset(directory) -> list[PatientCase]:
    return [load_case(p) for p in dataset_patient_dirs(directory)]


def save_volume_with_sidecar(directory, name: str, volume: np.ndarray, meta: dict) -> Path:
    """Write ``<name>.raw`` plus ``<name>.json`` carrying the shape and extra metadata."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_raw(d / f"{name}.raw", volume)
    write_json(d / f"{name}.json",
               {"format_version": FORMAT_VERSION, "shape": list(volume.shape), **meta})
    return d / f"{name}.raw"


def load_volume_with_sidecar(raw_path) -> tuple[np.ndarray, dict]:
    raw_path = Path(raw_path)
    meta = read_json(raw_path.with_suffix(".json"))
    return read_raw(raw_path, tuple(meta["shape"])), meta


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Single ``.npz`` archive: named float32 arrays plus a JSON metadata block."""
    payload = {name: np.asarray(a, dtype="<f4") for name, a in arrays.items()}
    payload["__meta__"] = np.array(json.dumps({"format_version": FORMAT_VERSION, **meta},
                                              sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["__meta__"]))
        arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {meta.get('format_version')}")
    return arrays, meta
