"""3D ResNet18-style classifier with instance normalization and leaky ReLU.

The network is built for patch-sized inputs (``stage_mode == "patch"``): the
head average-pools the final feature map with a fixed window sized for the
configured patch. :func:`adapt_for_stage2` inserts a parameter-free
adaptive average pool so whole-breast volumes of any size map to the same
feature length.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError, StageError

AXES = ("x", "y", "z")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ConfigurationError(f"expected 3 values, got {v}")
    return t


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 6
    n_classes: int = 2
    base_width: int = 16
    block_widths: tuple[int, ...] = (16, 32, 64, 128)
    leaky_slope: float = 0.01
    norm: str = "instance"
    stem_kernel: int = 3
    stem_stride: tuple[int, int, int] = (2, 2, 1)
    # z is not downsampled before the third stage so 4-slice patches survive
    stage_strides: tuple[tuple[int, int, int], ...] = ((1, 1, 1), (2, 2, 1), (2, 2, 2), (2, 2, 2))
    patch_shape: tuple[int, int, int] = (64, 64, 4)
    norm_eps: float = 1e-5
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "block_widths", tuple(int(w) for w in self.block_widths))
        object.__setattr__(self, "stem_stride", _triple(self.stem_stride))
        object.__setattr__(self, "stage_strides", tuple(_triple(s) for s in self.stage_strides))
        object.__setattr__(self, "patch_shape", _triple(self.patch_shape))
        self.validate()

    def validate(self) -> None:
        if self.in_channels < 1:
            raise ConfigurationError("in_channels must be >= 1")
        if self.n_classes < 2:
            raise ConfigurationError("n_classes must be >= 2")
        w = self.block_widths
        if len(w) != 4 or w[0] != self.base_width or self.base_width < 1:
            raise ConfigurationError(f"block_widths must be four stages starting at base_width, got {w}")
        if any(b != 2 * a for a, b in zip(w, w[1:])):
            raise ConfigurationError(f"block_widths must double per stage, got {w}")
        if len(self.stage_strides) != 4:
            raise ConfigurationError("stage_strides needs one stride per residual stage")
        if self.norm != "instance":
            raise ConfigurationError(f"unsupported norm {self.norm!r}")
        if self.stem_kernel < 1 or self.stem_kernel % 2 == 0:
            raise ConfigurationError("stem_kernel must be a positive odd integer")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_widths"] = list(self.block_widths)
        d["stem_stride"] = list(self.stem_stride)
        d["stage_strides"] = [list(s) for s in self.stage_strides]
        d["patch_shape"] = list(self.patch_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def instance_normalize(x: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Standardize each (sample, channel) over its spatial extent."""
    dims = tuple(range(2, x.dim()))
    mean = x.mean(dim=dims, keepdim=True)
    var = x.var(dim=dims, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


class InstanceNorm3d(nn.Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        shape = (1, -1, 1, 1, 1)
        return instance_normalize(x, self.eps) * self.weight.view(shape) + self.bias.view(shape)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride, slope: float, eps: float):
        super().__init__()
        self.conv1 = nn.Conv3d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm1 = InstanceNorm3d(cout, eps)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = InstanceNorm3d(cout, eps)
        self.slope = slope
        self.shortcut = None
        if tuple(stride) != (1, 1, 1) or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv3d(cin, cout, 1, stride=stride, bias=False), InstanceNorm3d(cout, eps)
            )

    def forward(self, x):
        out = F.leaky_relu(self.norm1(self.conv1(x)), self.slope)
        out = self.norm2(self.conv2(out))
        sc = x if self.shortcut is None else self.shortcut(x)
        return F.leaky_relu(out + sc, self.slope)


class ResNet3D(nn.Module):
    """ResNet18 topology: stem, four stages of two basic blocks, pooled FC head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config
        w = c.block_widths
        self.stem = nn.Conv3d(c.in_channels, w[0], c.stem_kernel, stride=c.stem_stride,
                              padding=c.stem_kernel // 2, bias=False)
        self.stem_norm = InstanceNorm3d(w[0], c.norm_eps)
        stages = []
        cin = w[0]
        for width, stride in zip(w, c.stage_strides):
            stages.append(nn.Sequential(
                BasicBlock(cin, width, stride, c.leaky_slope, c.norm_eps),
                BasicBlock(width, width, (1, 1, 1), c.leaky_slope, c.norm_eps),
            ))
            cin = width
        self.stages = nn.ModuleList(stages)
        self.pool_window = self.feature_shape(c.patch_shape)
        self.pool = nn.AvgPool3d(self.pool_window)
        self.adapter: nn.Module | None = None
        self.fc = nn.Linear(w[-1], c.n_classes)
        self.reset_parameters()

    @property
    def stage_mode(self) -> str:
        return "patch" if self.adapter is None else "whole_volume"

    def reset_parameters(self) -> None:
        g = torch.Generator().manual_seed(self.config.init_seed)
        slope = self.config.leaky_slope
        for name, p in self.named_parameters():
            with torch.no_grad():
                if p.dim() == 5:
                    fan_in = p[0].numel()
                    std = (2.0 / ((1 + slope**2) * fan_in)) ** 0.5
                    p.copy_(torch.randn(p.shape, generator=g) * std)
                elif p.dim() == 2:
                    bound = 1.0 / p.shape[1] ** 0.5
                    p.copy_((torch.rand(p.shape, generator=g) * 2 - 1) * bound)
                elif name == "fc.bias":
                    p.zero_()
        for m in self.modules():
            if isinstance(m, InstanceNorm3d):
                with torch.no_grad():
                    m.weight.fill_(1.0)
                    m.bias.zero_()

    def feature_shape(self, spatial) -> tuple[int, int, int]:
        """Spatial size of the final-stage feature map for an input of ``spatial``.

        Raises :class:`ShapeError` naming the first axis that collapses.
        """
        size = list(_triple(spatial))
        k = self.config.stem_kernel

        def step(size, kernel, stride, pad, where):
            out = []
            for axis, n, s in zip(AXES, size, stride):
                m = (n + 2 * pad - kernel) // s + 1
                if m < 1:
                    raise ShapeError(f"input too small along {axis}: {where} leaves no voxels")
                out.append(m)
            return out

        size = step(size, k, self.config.stem_stride, k // 2, "stem")
        for i, stride in enumerate(self.config.stage_strides):
            size = step(size, 3, stride, 1, f"stage {i + 1}")
        return tuple(size)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 5:
            raise ShapeError(f"expected batch x channels x X x Y x Z, got shape {tuple(x.shape)}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} channels, got {x.shape[1]}")
        fs = self.feature_shape(x.shape[2:])
        for axis, n, win in zip(AXES, fs, self.pool_window):
            if n < win:
                raise ShapeError(
                    f"input too small along {axis}: final feature extent {n} < pooling window {win}"
                )
            if self.adapter is None and n // win != 1:
                raise ShapeError(
                    f"patch-mode model got a larger input along {axis} "
                    f"({tuple(x.shape[2:])} vs patch {self.config.patch_shape}); adapt it first"
                )

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Final-stage feature maps, ``batch x C x fx x fy x fz``."""
        slope = self.config.leaky_slope
        x = F.leaky_relu(self.stem_norm(self.stem(x)), slope)
        for stage in self.stages:
            x = stage(x)
        return x

    def head(self, feats: torch.Tensor) -> torch.Tensor:
        pooled = self.pool(feats)
        if self.adapter is not None:
            pooled = self.adapter(pooled)
        return self.fc(torch.flatten(pooled, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.head(self.features(x))


def build_model(config: ModelConfig | None = None) -> ResNet3D:
    return ResNet3D(config or ModelConfig())


def as_tensor(batch, model: nn.Module) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if isinstance(batch, torch.Tensor):
        return batch.to(dtype)
    return torch.as_tensor(np.asarray(batch), dtype=dtype)


def forward(model: ResNet3D, batch) -> torch.Tensor:
    """Logits ``batch x n_classes`` for a ``batch x C x X x Y x Z`` input."""
    return model(as_tensor(batch, model))


def adapt_for_stage2(model: ResNet3D) -> ResNet3D:
    """Insert the adaptive pool (output 1x1x1) between the fixed pool and the FC layer."""
    if model.adapter is not None:
        raise StageError("model is already adapted for whole-volume input")
    model.adapter = nn.AdaptiveAvgPool3d((1, 1, 1))
    for p in model.parameters():
        p.requires_grad_(True)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def state_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_state_arrays(model: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    dtype = next(model.parameters()).dtype
    model.load_state_dict({k: torch.as_tensor(v, dtype=dtype) for k, v in arrays.items()})
