"""Synthetic DCE-MRI-like breast phantom.

Each patient volume has shape ``(channels, x, y, z)``. The left breast
occupies ``x < X/2`` and the right breast ``x >= X/2``; tissue sits in the
anterior half ``y < Y/2`` and the posterior half is air. Dynamic channels
follow :func:`kinetic_curve`; an optional last channel is a static T2-like
texture. Thin enhancing vessels with arterial kinetics run through both
breasts, so wash-out alone does not identify a malignant lesion.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError

KINDS = ("benign", "malignant", "background", "vessel")


@dataclass(frozen=True)
class PhantomConfig:
    n_patients: int = 60
    volume_shape: tuple[int, int, int] = (64, 64, 16)
    n_timepoints: int = 5
    include_t2: bool = True
    malignant_patient_fraction: float = 305 / 408
    # fraction of malignant patients with a malignant lesion in both breasts;
    # 0.08 reproduces a ~40/60 breast-level split at the default patient ratio
    bilateral_fraction: float = 0.08
    # probability that a breast without malignancy carries no lesion at all
    healthy_breast_probability: float = 0.4
    # probability that a malignant breast also carries a benign lesion
    extra_benign_probability: float = 0.3
    lesion_radius_range: tuple[float, float] = (1.5, 2.5)
    lesion_amplitude_range: tuple[float, float] = (0.35, 0.6)
    # lesion extent along z relative to in-plane radius (thick slices)
    lesion_z_scale: float = 0.5
    # enhancing vessels per breast; brighter than lesions so every breast has
    # a strongly enhancing structure, with persistent (non-washout) kinetics
    n_vessels_range: tuple[int, int] = (1, 3)
    vessel_radius: float = 1.0
    vessel_amplitude_range: tuple[float, float] = (0.6, 0.8)
    noise_sigma: float = 0.03
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "volume_shape", tuple(int(v) for v in self.volume_shape))
        object.__setattr__(
            self, "lesion_radius_range", tuple(float(v) for v in self.lesion_radius_range)
        )
        object.__setattr__(
            self, "lesion_amplitude_range", tuple(float(v) for v in self.lesion_amplitude_range)
        )
        object.__setattr__(self, "n_vessels_range", tuple(int(v) for v in self.n_vessels_range))
        object.__setattr__(
            self, "vessel_amplitude_range", tuple(float(v) for v in self.vessel_amplitude_range)
        )
        self.validate()

    @property
    def n_channels(self) -> int:
        return self.n_timepoints + (1 if self.include_t2 else 0)

    @property
    def channel_names(self) -> list[str]:
        names = [f"dce{i}" for i in range(self.n_timepoints)]
        if self.include_t2:
            names.append("t2")
        return names

    def validate(self) -> None:
        if len(self.volume_shape) != 3 or min(self.volume_shape) < 8:
            raise ConfigurationError(f"volume_shape must be 3 dims each >= 8, got {self.volume_shape}")
        if self.volume_shape[0] % 2:
            raise ConfigurationError("volume x-extent must be even to split the breasts")
        if self.n_timepoints < 3:
            # a wash-out curve needs a pre-contrast point, a peak and a later drop
            raise ConfigurationError("n_timepoints must be >= 3")
        if self.n_patients < 1:
            raise ConfigurationError("n_patients must be >= 1")
        for name in ("malignant_patient_fraction", "bilateral_fraction",
                     "healthy_breast_probability", "extra_benign_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        rmin, rmax = self.lesion_radius_range
        if not 0 < rmin <= rmax:
            raise ConfigurationError(f"bad lesion_radius_range {self.lesion_radius_range}")
        X, Y, Z = self.volume_shape
        margin = math.ceil(rmax) + 1
        if 2 * margin >= X // 2 or 2 * margin >= Y // 2:
            raise ConfigurationError(
                f"lesion radius {rmax} does not fit inside a breast half of {X // 2}x{Y // 2}"
            )
        if 2 * _z_margin(rmax, self.lesion_z_scale) > Z:
            raise ConfigurationError(f"lesion radius {rmax} does not fit the z-extent {Z}")
        if not 0 <= self.n_vessels_range[0] <= self.n_vessels_range[1]:
            raise ConfigurationError(f"bad n_vessels_range {self.n_vessels_range}")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        return cls(**d)


@dataclass
class LesionAnnotation:
    center: tuple[int, int, int]
    malignant: bool
    radius: float

    def to_dict(self) -> dict:
        return {"center": [int(c) for c in self.center], "malignant": bool(self.malignant),
                "radius": float(self.radius)}

    @classmethod
    def from_dict(cls, d: dict) -> "LesionAnnotation":
        return cls(tuple(int(c) for c in d["center"]), bool(d["malignant"]), float(d["radius"]))


@dataclass
class PatientCase:
    patient_id: str
    volume: np.ndarray
    lesions: list[LesionAnnotation] = field(default_factory=list)
    left_label: bool = False
    right_label: bool = False


def breast_labels(lesions, x_extent: int) -> tuple[bool, bool]:
    """Return (left, right) malignancy from lesion centers."""
    mid = x_extent // 2
    left = any(l.malignant and l.center[0] < mid for l in lesions)
    right = any(l.malignant and l.center[0] >= mid for l in lesions)
    return left, right


def kinetic_curve(kind: str, timepoint_index: int, n_timepoints: int) -> float:
    """Relative contrast enhancement at one timepoint.

    ``benign`` enhances persistently, ``malignant`` peaks early and washes
    out, ``background`` rises slowly and stays below the benign curve and
    ``vessel`` saturates by the first post-contrast phase without washing out.
    All curves start at 0 (pre-contrast) and stay within [0, 1].
    """
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if n_timepoints < 2:
        raise ValueError("n_timepoints must be >= 2")
    if not 0 <= timepoint_index < n_timepoints:
        raise ValueError(f"timepoint_index {timepoint_index} out of range [0, {n_timepoints})")
    u = timepoint_index / (n_timepoints - 1)
    if kind == "background":
        return 0.35 * u
    if kind == "vessel":
        return (1.0 - math.exp(-8.0 * u)) / (1.0 - math.exp(-8.0))
    if kind == "benign":
        return 0.85 * (1.0 - math.exp(-3.0 * u)) / (1.0 - math.exp(-3.0))
    if n_timepoints < 3:
        raise ValueError("a malignant curve needs n_timepoints >= 3")
    peak = max(1, min(n_timepoints - 2, round((n_timepoints - 1) / 4)))
    if timepoint_index <= peak:
        return timepoint_index / peak
    return 1.0 - 0.45 * (timepoint_index - peak) / (n_timepoints - 1 - peak)


def _z_margin(radius: float, z_scale: float) -> int:
    return math.ceil(max(1.0, radius * z_scale))


def _smooth_field(rng: np.random.Generator, shape, sigma) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    f -= f.min()
    peak = f.max()
    return f / peak if peak > 0 else f


def tissue_mask(volume_shape) -> np.ndarray:
    """Boolean body mask: two half-ellipsoids against a flat chest wall at y = Y/2."""
    X, Y, Z = volume_shape
    x = np.arange(X)[:, None, None]
    y = np.arange(Y)[None, :, None]
    z = np.arange(Z)[None, None, :]
    half = X // 2
    cx = np.where(x < half, (half - 1) / 2.0, half + (half - 1) / 2.0)
    ax = 0.95 * half / 2.0
    ay = 1.1 * (Y / 2.0)
    cz, az = (Z - 1) / 2.0, 0.65 * Z
    zscale = np.sqrt(np.clip(1.0 - ((z - cz) / az) ** 2, 0.0, 1.0))
    r2 = ((x - cx) / (ax * zscale)) ** 2 + ((Y / 2.0 - y) / (ay * zscale)) ** 2
    return (r2 <= 1.0) & (y < Y // 2)


def lesion_weight(shape, center, radius: float, z_scale: float) -> np.ndarray:
    """Ellipsoidal lesion profile: 1 in the core, cosine taper to 0 at ``radius``."""
    X, Y, Z = shape
    x = np.arange(X)[:, None, None] - center[0]
    y = np.arange(Y)[None, :, None] - center[1]
    z = np.arange(Z)[None, None, :] - center[2]
    rz = max(1.0, radius * z_scale)
    d = np.sqrt((x / radius) ** 2 + (y / radius) ** 2 + (z / rz) ** 2)
    core = 0.6
    taper = 0.5 * (1.0 + np.cos(np.pi * np.clip((d - core) / (1.0 - core), 0.0, 1.0)))
    return np.where(d <= core, 1.0, taper)


def vessel_weight(shape, start, end, radius: float) -> np.ndarray:
    """Tube along the segment start-end with a cosine-tapered cross-section."""
    X, Y, Z = shape
    grid = np.stack(np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij"), -1)
    a, b = np.asarray(start, float), np.asarray(end, float)
    ab = b - a
    t = np.clip(((grid - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
    d = np.linalg.norm(grid - (a + t[..., None] * ab), axis=-1) / radius
    return 0.5 * (1.0 + np.cos(np.pi * np.clip(d, 0.0, 1.0)))


def _random_vessel(rng, half: int, cfg: PhantomConfig):
    X, Y, Z = cfg.volume_shape
    hx = X // 2
    length = rng.uniform(0.5, 0.9) * min(hx, Y // 2)
    phi = rng.uniform(0, 2 * np.pi)
    center = np.array([half * hx + rng.uniform(0.3, 0.7) * hx, rng.uniform(0.3, 0.8) * (Y // 2),
                       rng.uniform(0.25, 0.75) * (Z - 1)])
    direction = np.array([np.cos(phi), np.sin(phi), rng.uniform(-0.1, 0.1)])
    return center - 0.5 * length * direction, center + 0.5 * length * direction


def _place_lesion(rng, mask, half: int, radius: float, cfg: PhantomConfig, placed):
    X, Y, Z = cfg.volume_shape
    m = math.ceil(radius) + 1
    mz = _z_margin(radius, cfg.lesion_z_scale)
    lo_x, hi_x = half * (X // 2) + m, (half + 1) * (X // 2) - m
    for _ in range(200):
        c = (int(rng.integers(lo_x, hi_x)), int(rng.integers(m, Y // 2 - m)),
             int(rng.integers(mz - 1, Z - mz + 1)))
        if not mask[c]:
            continue
        if all(np.linalg.norm(np.subtract(c, p.center)) > radius + p.radius + 1 for p in placed):
            return c
    raise ConfigurationError("could not place a lesion inside the breast tissue")


def generate_case(config: PhantomConfig, index: int, malignant: bool) -> PatientCase:
    """Render one patient. Randomness derives only from (seed, index)."""
    rng = np.random.default_rng([config.seed, index])
    X, Y, Z = config.volume_shape
    mask = tissue_mask(config.volume_shape)

    if malignant:
        if rng.random() < config.bilateral_fraction:
            mal_sides = {0, 1}
        else:
            mal_sides = {int(rng.integers(2))}
    else:
        mal_sides = set()

    rmin, rmax = config.lesion_radius_range
    lesions: list[LesionAnnotation] = []
    for side in (0, 1):
        kinds = []
        if side in mal_sides:
            kinds.append(True)
            if rng.random() < config.extra_benign_probability:
                kinds.append(False)
        elif rng.random() >= config.healthy_breast_probability:
            kinds.extend([False] * int(rng.integers(1, 3)))
        for is_mal in kinds:
            radius = float(rng.uniform(rmin, rmax))
            c = _place_lesion(rng, mask, side, radius, config, lesions)
            lesions.append(LesionAnnotation(c, is_mal, radius))

    texture = _smooth_field(rng, config.volume_shape, sigma=(3.0, 3.0, 1.5))
    glandular = np.clip((texture - 0.45) * 2.5, 0.0, 1.0)
    base = 0.2 + 0.2 * texture
    bpe_amp = float(rng.uniform(0.05, 0.3))
    t2_texture = _smooth_field(rng, config.volume_shape, sigma=(2.0, 2.0, 1.0))

    vessels = []
    for side in (0, 1):
        for _ in range(int(rng.integers(config.n_vessels_range[0], config.n_vessels_range[1] + 1))):
            start, end = _random_vessel(rng, side, config)
            vessels.append((float(rng.uniform(*config.vessel_amplitude_range)),
                            vessel_weight(config.volume_shape, start, end, config.vessel_radius)))

    amps = [float(rng.uniform(*config.lesion_amplitude_range)) for _ in lesions]
    weights = [lesion_weight(config.volume_shape, l.center, l.radius, config.lesion_z_scale)
               for l in lesions]

    n = config.n_timepoints
    vol = np.zeros((config.n_channels, X, Y, Z), dtype=np.float64)
    for t in range(n):
        img = base + bpe_amp * kinetic_curve("background", t, n) * glandular
        for les, a, w in zip(lesions, amps, weights):
            kind = "malignant" if les.malignant else "benign"
            img = img + a * kinetic_curve(kind, t, n) * w
        for a, w in vessels:
            img = img + a * kinetic_curve("vessel", t, n) * w
        vol[t] = img
    if config.include_t2:
        img = 0.3 + 0.3 * t2_texture
        for w in weights:
            img = img + 0.15 * w
        vol[n] = img
    vol = np.clip(vol, 0.0, 1.0) * mask
    if config.noise_sigma > 0:
        vol = vol + config.noise_sigma * rng.standard_normal(vol.shape) * mask
    left, right = breast_labels(lesions, X)
    return PatientCase(f"P{index:04d}", vol.astype(np.float32), lesions, left, right)


def malignant_assignment(config: PhantomConfig) -> np.ndarray:
    """Exact-quota patient malignancy flags, shuffled by the config seed."""
    n_mal = int(round(config.malignant_patient_fraction * config.n_patients))
    flags = np.zeros(config.n_patients, dtype=bool)
    flags[:n_mal] = True
    return np.random.default_rng([config.seed, 2**31 - 1]).permutation(flags)


def generate_phantom(config: PhantomConfig, jobs: int = 1) -> list[PatientCase]:
    """Generate ``config.n_patients`` cases; serial and parallel output are identical."""
    flags = malignant_assignment(config)
    args = [(config, i, bool(flags[i])) for i in range(config.n_patients)]
    if jobs <= 1:
        return [generate_case(*a) for a in args]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(lambda a: generate_case(*a), args))
