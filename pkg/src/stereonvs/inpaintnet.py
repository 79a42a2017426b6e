"""Texture inpainting network and the median-of-warped-views baseline.

The network consumes a stack of forward-mapped views, four channels per view
(RGB plus validity mask), and produces the rendered target view.  Layout:
a full-resolution entry block, a half-resolution residual trunk fed by both
pooled features and the pooled raw input, an upsampling block that re-joins
the full-resolution features through a long skip, and a linear head clamped
to [0, 1].

Views are stacked nearest-to-target first; ties break towards the earlier
frame.  Residual blocks use ReLU without batch norm (switchable), and a pure
convolutional variant replaces each residual block with a single conv of the
same shape.
"""
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import nn, ops
from .geometry import WarpedView
from .tensor import Tensor, concat

MODEL_NAME_RESIDUAL = "inpaintnet-v1"
MODEL_NAME_CONV = "inpaintnet-conv-v1"
CHANNELS_PER_VIEW = 4


class _ConvBlock(nn.Module):
    """Plain conv + ReLU stand-in for a residual block (ablation variant)."""

    def __init__(self, channels: int, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, rng, dtype=dtype)

    def forward(self, x):
        return self.conv1(x).relu()


class InpaintNet(nn.Module):
    """Hole-filling renderer over stacked warped views.

    ``output_activation`` is "clamp" (linear head clamped to [0, 1]) or
    "sigmoid".
    """

    def __init__(self, n_views: int = 4, seed: int = 0, residual: bool = True,
                 use_bn: bool = False, output_activation: str = "clamp",
                 dtype=np.float32):
        super().__init__()
        if output_activation not in ("clamp", "sigmoid"):
            raise ValueError(f"unknown output activation {output_activation!r}")
        rng = np.random.default_rng(seed)
        self.n_views = n_views
        self.residual = residual
        self.output_activation = output_activation
        cin = CHANNELS_PER_VIEW * n_views

        def block(channels):
            if residual:
                return nn.ResidualBlock(channels, rng, use_bn=use_bn, dtype=dtype)
            return _ConvBlock(channels, rng, dtype=dtype)

        self.conv_0 = nn.Conv2d(cin, 32, 3, rng, dtype=dtype)
        self.res_1 = block(32)
        self.res_2 = block(32 + cin)
        for i in range(3, 9):
            setattr(self, f"res_{i}", block(48))
        self.conv_9 = nn.Conv2d(48 + 32, 48, 3, rng, dtype=dtype)
        self.res_10 = block(48)
        self.res_11 = block(48)
        self.conv_12 = nn.Conv2d(48, 16, 3, rng, dtype=dtype)
        self.output = nn.Conv2d(16, 3, 3, rng, dtype=dtype)

    @property
    def model_name(self) -> str:
        return MODEL_NAME_RESIDUAL if self.residual else MODEL_NAME_CONV

    def forward(self, x: Tensor) -> Tensor:
        """(N, 4V, H, W) warped stack -> (N, 3, H, W) rendering in [0, 1]."""
        expected = CHANNELS_PER_VIEW * self.n_views
        if x.ndim != 4 or x.shape[1] != expected:
            raise ValueError(
                f"inpaint input must be (N, {expected}, H, W) for {self.n_views} "
                f"views of 4 channels each, got {x.shape}")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"image extents must be even, got {x.shape[2:]}")
        full = self.res_1(self.conv_0(x).relu())
        half = self.res_2(concat([ops.avg_pool2d(full), ops.avg_pool2d(x)], axis=1))
        for i in range(3, 9):
            half = getattr(self, f"res_{i}")(half)
        up = concat([ops.upsample_nearest2d(half), full], axis=1)
        h = self.res_11(self.res_10(self.conv_9(up).relu()))
        h = self.output(self.conv_12(h).relu())
        if self.output_activation == "sigmoid":
            return 1.0 / (1.0 + (-h).exp())
        return h.clamp(0.0, 1.0)


def stack_warped_views(views: Sequence[WarpedView], dtype=np.float32) -> np.ndarray:
    """Interleave view channels as (4V, H, W): rgb0, mask0, rgb1, mask1, ..."""
    parts = []
    for v in views:
        parts.append(v.rgb.astype(dtype))
        parts.append(v.mask.astype(dtype)[None])
    return np.concatenate(parts, axis=0)


def order_views_by_offset(offsets: Sequence[int]) -> List[int]:
    """Indices sorted nearest-to-target first, earlier frame on ties."""
    return sorted(range(len(offsets)), key=lambda i: (abs(offsets[i]), offsets[i]))


def median_fusion(views: Sequence[WarpedView]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pixel, per-channel median over views that saw the pixel.

    Even counts average the two middle values.  Pixels no view covers are
    zero and flagged in the returned residual-hole mask.
    """
    if len(views) == 0:
        raise ValueError("need at least one view")
    rgb = np.stack([v.rgb for v in views])            # (V, 3, H, W)
    mask = np.stack([v.mask for v in views]) > 0      # (V, H, W)
    hole = ~mask.any(axis=0)
    masked = np.ma.masked_array(rgb, mask=np.broadcast_to(~mask[:, None], rgb.shape))
    med = np.ma.median(masked, axis=0).filled(0.0)
    return med.astype(rgb.dtype), hole
