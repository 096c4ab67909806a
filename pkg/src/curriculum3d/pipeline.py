"""Whole-patient volumes to single-breast samples and Stage-1 patches.

Arrays are channel-first, ``(channels, x, y, z)``, with z as the last axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, SamplerError
from .phantom import LesionAnnotation, PatientCase


@dataclass
class BreastSample:
    patient_id: str
    side: str
    volume: np.ndarray
    label: bool
    lesions: list[LesionAnnotation] = field(default_factory=list)

    @property
    def channel_count(self) -> int:
        return self.volume.shape[0]

    @property
    def key(self) -> str:
        return f"{self.patient_id}:{self.side}"


@dataclass
class PatchSample:
    patch: np.ndarray
    label: bool
    source: tuple[str, str]
    origin: tuple[int, int, int]


def resample_volume(volume: np.ndarray, target_shape) -> np.ndarray:
    """Trilinear resampling of every channel onto ``target_shape``.

    Corner voxels of source and target grids are aligned, so an identity
    resample returns the input unchanged.
    """
    volume = np.asarray(volume)
    target_shape = tuple(int(t) for t in target_shape)
    if len(target_shape) != 3 or min(target_shape) < 1:
        raise ValueError(f"target_shape must be three dims >= 1, got {target_shape}")
    src = volume.shape[1:]
    if min(src) < 2:
        raise ValueError(f"source spatial dims must be >= 2, got {src}")
    if src == target_shape:
        return volume.copy()
    axes = [np.linspace(0.0, s - 1, t) for s, t in zip(src, target_shape)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    out = np.empty((volume.shape[0],) + target_shape, dtype=volume.dtype)
    for c in range(volume.shape[0]):
        out[c] = ndimage.map_coordinates(volume[c], coords, order=1, mode="nearest")
    return out


def rescale_point(point, src_shape, target_shape) -> tuple[int, int, int]:
    """Map a voxel coordinate through the corner-aligned grid used by :func:`resample_volume`."""
    out = []
    for p, s, t in zip(point, src_shape, target_shape):
        v = p * (t - 1) / (s - 1) if s > 1 else 0.0
        out.append(int(min(max(round(v), 0), t - 1)))
    return tuple(out)


def crop_air(volume: np.ndarray, threshold: float) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Drop leading/trailing y-slabs whose maximum over channels is below ``threshold``.

    Returns the cropped volume and the ``(x, y, z)`` offset of its origin.
    """
    if volume.size == 0:
        raise ValueError("empty volume")
    slab_max = volume.max(axis=(0, 1, 3))
    keep = np.flatnonzero(slab_max >= threshold)
    if keep.size == 0:
        raise DegenerateInputError(f"whole volume below air threshold {threshold}")
    lo, hi = int(keep[0]), int(keep[-1]) + 1
    return volume[:, :, lo:hi, :], (0, lo, 0)


def _shift(lesion: LesionAnnotation, offset) -> LesionAnnotation:
    return replace(lesion, center=tuple(int(c - o) for c, o in zip(lesion.center, offset)))


def split_breasts(case: PatientCase) -> tuple[BreastSample, BreastSample]:
    """Split at the x midpoint; lesion centers move to breast-local frames.

    A center at ``x == X/2`` belongs to the right half (voxel containment).
    """
    X = case.volume.shape[1]
    if X % 2:
        raise ValueError(f"x-extent must be even, got {X}")
    mid = X // 2
    out = []
    for side, sl, off in (("left", slice(0, mid), 0), ("right", slice(mid, X), mid)):
        own = [_shift(l, (off, 0, 0)) for l in case.lesions
               if (l.center[0] < mid) == (side == "left")]
        out.append(BreastSample(case.patient_id, side, case.volume[:, sl].copy(),
                                any(l.malignant for l in own), own))
    return out[0], out[1]


def window_label(lesions, origin, patch_shape) -> tuple[bool, bool]:
    """Return (contains any lesion center, contains a malignant one)."""
    any_in = mal_in = False
    for l in lesions:
        if all(o <= c < o + p for c, o, p in zip(l.center, origin, patch_shape)):
            any_in = True
            mal_in = mal_in or l.malignant
    return any_in, mal_in


def valid_origins(spatial_shape, lesions, patch_shape) -> np.ndarray:
    """Boolean grid over patch origins whose window holds at least one lesion center."""
    grid = tuple(s - p + 1 for s, p in zip(spatial_shape, patch_shape))
    mask = np.zeros(grid, dtype=bool)
    for l in lesions:
        sl = tuple(slice(max(c - p + 1, 0), min(c, g - 1) + 1)
                   for c, p, g in zip(l.center, patch_shape, grid))
        mask[sl] = True
    return mask


def sample_patch(sample: BreastSample, patch_shape, rng: np.random.Generator) -> PatchSample:
    """Draw a patch uniformly among windows containing at least one lesion center.

    The label is malignant iff a malignant lesion center lies in the window.
    """
    patch_shape = tuple(int(p) for p in patch_shape)
    spatial = sample.volume.shape[1:]
    if any(p > s or p < 1 for p, s in zip(patch_shape, spatial)):
        raise ValueError(f"patch {patch_shape} does not fit volume {spatial}")
    if not sample.lesions:
        raise SamplerError(f"{sample.key} has no lesions")
    mask = valid_origins(spatial, sample.lesions, patch_shape)
    flat = np.flatnonzero(mask)
    if flat.size == 0:
        raise SamplerError(f"{sample.key}: no lesion center inside the volume")
    origin = tuple(int(i) for i in np.unravel_index(flat[rng.integers(flat.size)], mask.shape))
    _, label = window_label(sample.lesions, origin, patch_shape)
    sl = (slice(None),) + tuple(slice(o, o + p) for o, p in zip(origin, patch_shape))
    return PatchSample(sample.volume[sl].copy(), label, (sample.patient_id, sample.side), origin)


def _rotate_xy(volume: np.ndarray, angle_deg: float, fill) -> np.ndarray:
    """Rotate every channel around the z axis through the x-y center."""
    X, Y = volume.shape[1:3]
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    # output voxel o samples input R(-theta) (o - center) + center
    inv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    center = np.array([(X - 1) / 2.0, (Y - 1) / 2.0, 0.0])
    offset = center - inv @ center
    out = np.empty_like(volume)
    for ch in range(volume.shape[0]):
        out[ch] = ndimage.affine_transform(volume[ch], inv, offset=offset, order=1,
                                           mode="constant", cval=float(fill[ch]))
    return out


def _rotate_point(point, angle_deg, spatial_shape):
    X, Y, Z = spatial_shape
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    dx, dy = point[0] - (X - 1) / 2.0, point[1] - (Y - 1) / 2.0
    x = c * dx - s * dy + (X - 1) / 2.0
    y = s * dx + c * dy + (Y - 1) / 2.0
    return (int(min(max(round(x), 0), X - 1)), int(min(max(round(y), 0), Y - 1)), point[2])


def augment(item, rng: np.random.Generator, max_rot_degrees: float = 15.0, mirror: bool = True,
            *, angle: float | None = None, flip: bool | None = None):
    """Random x-mirror (p = 1/2) and rotation around z by U(-max, +max) degrees.

    Works on :class:`BreastSample` (lesion centers follow the transform) and
    :class:`PatchSample`. ``angle``/``flip`` override the random draws.
    Rotation fill is the per-channel median of the input.
    """
    coin = rng.random()
    draw = rng.uniform(-max_rot_degrees, max_rot_degrees)
    flip = (mirror and coin < 0.5) if flip is None else flip
    angle = draw if angle is None else angle

    is_breast = isinstance(item, BreastSample)
    vol = item.volume if is_breast else item.patch
    spatial = vol.shape[1:]
    lesions = list(item.lesions) if is_breast else []
    out = vol.copy()
    if flip:
        out = out[:, ::-1].copy()
        lesions = [replace(l, center=(spatial[0] - 1 - l.center[0],) + tuple(l.center[1:]))
                   for l in lesions]
    if angle != 0:
        fill = np.median(out.reshape(out.shape[0], -1), axis=1)
        out = _rotate_xy(out, angle, fill)
        lesions = [replace(l, center=_rotate_point(l.center, angle, spatial)) for l in lesions]
    if is_breast:
        return replace(item, volume=out, lesions=lesions)
    return replace(item, patch=out)


def normalize(item):
    """Per-channel min-max scaling to [0, 1]; constant channels become zeros."""
    vol = item.volume if isinstance(item, BreastSample) else np.asarray(item)
    flat = vol.reshape(vol.shape[0], -1)
    lo = flat.min(axis=1)
    span = flat.max(axis=1) - lo
    safe = np.where(span > 0, span, 1.0)
    out = ((vol - lo[:, None, None, None]) / safe[:, None, None, None])
    out[span <= 0] = 0.0
    out = out.astype(vol.dtype, copy=False)
    if isinstance(item, BreastSample):
        return replace(item, volume=out)
    return out


def prepare_case(case: PatientCase, air_threshold_fraction: float = 0.05,
                 breast_shape=None) -> tuple[BreastSample, BreastSample]:
    """Crop air, optionally resample to ``2*bx, by, bz``, split and normalize."""
    thr = air_threshold_fraction * float(case.volume.max())
    vol, offset = crop_air(case.volume, thr)
    lesions = [_shift(l, offset) for l in case.lesions]
    if breast_shape is not None:
        bx, by, bz = breast_shape
        target = (2 * bx, by, bz)
        src = vol.shape[1:]
        if src != target:
            vol = resample_volume(vol, target)
            lesions = [replace(l, center=rescale_point(l.center, src, target)) for l in lesions]
    left, right = split_breasts(replace(case, volume=vol, lesions=lesions))
    return normalize(left), normalize(right)


def prepare_dataset(cases, air_threshold_fraction: float = 0.05, breast_shape=None) -> list[BreastSample]:
    out = []
    for case in cases:
        out.extend(prepare_case(case, air_threshold_fraction, breast_shape))
    return out
