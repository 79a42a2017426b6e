"""Unsupervised stereo disparity network.

Pipeline per view pair: shared 2D feature extractor (stride-2 stem plus nine
residual blocks), disparity-indexed feature volumes for the left and right
views, one shared 3D encoder-decoder that filters both volumes into cost
volumes, and a soft-argmin readout.

The feature volume lives at half resolution with half the disparity levels;
the final transposed convolution of the filter doubles all three dims, so
costs come out at full resolution with the full hypothesis count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from . import nn, ops
from .tensor import Tensor, concat

MODEL_NAME = "depthnet-v1"
FEATURE_CHANNELS = 32


@dataclass(frozen=True)
class DisparityHypotheses:
    """Monotonically increasing disparity values, in pixels."""
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("need a 1-D array of at least two hypotheses")
        if np.any(np.diff(v) <= 0):
            raise ValueError("hypotheses must be strictly increasing")
        if v[0] < 0:
            raise ValueError("hypotheses must be non-negative")

    @classmethod
    def linear(cls, count: int, d_max: float, d_min: float = 0.0) -> "DisparityHypotheses":
        if count % 2:
            raise ValueError("hypothesis count must be even (volume runs at half depth)")
        return cls(np.linspace(d_min, d_max, count))

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def d_min(self) -> float:
        return float(self.values[0])

    @property
    def d_max(self) -> float:
        return float(self.values[-1])


class FeatureExtractor(nn.Module):
    """Stride-2 stem, nine residual blocks, linear projection head."""

    def __init__(self, rng: np.random.Generator, in_channels: int = 3,
                 dtype=np.float32):
        super().__init__()
        self.conv_0 = nn.Conv2d(in_channels, FEATURE_CHANNELS, 5, rng, stride=2,
                                padding=2, dtype=dtype)
        for i in range(1, 10):
            setattr(self, f"res_{i}", nn.ResidualBlock(FEATURE_CHANNELS, rng, dtype=dtype))
        self.conv_10 = nn.Conv2d(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4:
            raise ValueError(f"expected (N, C, H, W), got {x.shape}")
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"image extents must be even, got {x.shape[2:]}")
        h = self.conv_0(x).relu()
        for i in range(1, 10):
            h = getattr(self, f"res_{i}")(h)
        return self.conv_10(h)


def _shift_columns(f: Tensor, shift: int) -> Tensor:
    """Shift feature columns, zero-filling the vacated border.

    Positive shifts move content towards +x (rightwards).
    """
    if shift == 0:
        return f
    w = f.shape[-1]
    if abs(shift) >= w:
        raise ValueError(f"shift {shift} exceeds feature width {w}")
    zeros = (f.ndim - 1) * ((0, 0),)
    if shift > 0:
        return f.pad(zeros + ((shift, 0),))[..., :w]
    return f.pad(zeros + ((0, -shift),))[..., -shift:]


def volume_shifts(hyps: DisparityHypotheses) -> np.ndarray:
    """Integer feature-grid shifts for each half-depth volume slice.

    Volume slice j matches full-resolution hypothesis 2j; at half resolution
    that is a shift of disp(2j)/2 feature pixels, rounded to nearest.
    """
    half = hyps.values[0::2] / 2.0
    return np.rint(half).astype(int)


def build_feature_volume(f_ref: Tensor, f_other: Tensor,
                         hyps: DisparityHypotheses, side: str) -> Tensor:
    """Stack (reference, shifted-other) feature pairs over disparity levels.

    For the left volume the right features shift rightwards by each
    disparity level; the right volume shifts the left features the opposite
    way.  Returns (N, 2C, D/2, h, w).
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    if f_ref.shape != f_other.shape:
        raise ValueError(f"feature shapes differ: {f_ref.shape} vs {f_other.shape}")
    if hyps.count % 2:
        raise ValueError("hypothesis count must be even (volume runs at half depth)")
    sign = 1 if side == "left" else -1
    slices = []
    for s in volume_shifts(hyps):
        pair = concat([f_ref, _shift_columns(f_other, sign * int(s))], axis=1)
        n, c2, h, w = pair.shape
        slices.append(pair.reshape(n, c2, 1, h, w))
    return concat(slices, axis=2)


class _Conv3dBlock(nn.Module):
    """conv3d -> ReLU -> BN."""

    def __init__(self, cin, cout, rng, stride=1, dtype=np.float32):
        super().__init__()
        self.conv = nn.Conv3d(cin, cout, 3, rng, stride=stride, dtype=dtype)
        self.bn = nn.BatchNorm(cout, dtype=dtype)

    def forward(self, x):
        return self.bn(self.conv(x).relu())


class _TrConv3dBlock(nn.Module):
    """transposed conv3d -> ReLU -> BN."""

    def __init__(self, cin, cout, rng, stride=2, dtype=np.float32):
        super().__init__()
        self.conv = nn.ConvTranspose3d(cin, cout, 3, rng, stride=stride, dtype=dtype)
        self.bn = nn.BatchNorm(cout, dtype=dtype)

    def forward(self, x, output_spatial):
        return self.bn(self.conv(x, output_spatial).relu())


def _check_halvable(extent: int, axis_name: str):
    e = extent
    for stage in range(3):
        if e != 1 and e % 2:
            raise ValueError(
                f"volume {axis_name} extent {extent} hits odd size {e} at halving "
                f"stage {stage + 1}; each extent must stay even (or collapse to 1) "
                f"through three halvings, e.g. a multiple of 8")
        e = (e + 2 - 3) // 2 + 1


class VolumeFilter(nn.Module):
    """3D encoder-decoder with skip connections, 32 channels throughout."""

    def __init__(self, rng: np.random.Generator, in_channels: int = 2 * FEATURE_CHANNELS,
                 dtype=np.float32):
        super().__init__()
        c = FEATURE_CHANNELS
        self.conv3d_1 = _Conv3dBlock(in_channels, c, rng, dtype=dtype)
        self.conv3d_2 = _Conv3dBlock(c, c, rng, dtype=dtype)
        self.conv3d_3 = _Conv3dBlock(c, c, rng, stride=2, dtype=dtype)
        self.conv3d_4 = _Conv3dBlock(c, c, rng, dtype=dtype)
        self.conv3d_5 = _Conv3dBlock(c, c, rng, dtype=dtype)
        self.conv3d_6 = _Conv3dBlock(c, c, rng, stride=2, dtype=dtype)
        self.conv3d_7 = _Conv3dBlock(c, c, rng, dtype=dtype)
        self.conv3d_8 = _Conv3dBlock(c, c, rng, stride=2, dtype=dtype)
        self.tr_conv3d_1 = _TrConv3dBlock(c, c, rng, dtype=dtype)
        self.tr_conv3d_2 = _TrConv3dBlock(2 * c, c, rng, dtype=dtype)
        self.tr_conv3d_3 = _TrConv3dBlock(2 * c, c, rng, dtype=dtype)
        self.tr_conv3d_4 = _TrConv3dBlock(2 * c, c, rng, dtype=dtype)
        self.output = nn.Conv3d(c, 1, 3, rng, dtype=dtype)

    def forward(self, v: Tensor) -> Tensor:
        """(N, 2C, D/2, h, w) -> cost volume (N, 1, D, 2h, 2w)."""
        if v.ndim != 5:
            raise ValueError(f"expected (N, C, D, h, w), got {v.shape}")
        for extent, name in zip(v.shape[2:], ("disparity", "height", "width")):
            _check_halvable(extent, name)
        a2 = self.conv3d_2(self.conv3d_1(v))
        a5 = self.conv3d_5(self.conv3d_4(self.conv3d_3(a2)))
        a7 = self.conv3d_7(self.conv3d_6(a5))
        a8 = self.conv3d_8(a7)
        t1 = self.tr_conv3d_1(a8, a7.shape[2:])
        t2 = self.tr_conv3d_2(concat([a7, t1], axis=1), a5.shape[2:])
        t3 = self.tr_conv3d_3(concat([a5, t2], axis=1), a2.shape[2:])
        full = tuple(2 * e for e in a2.shape[2:])
        t4 = self.tr_conv3d_4(concat([a2, t3], axis=1), full)
        return self.output(t4)


def soft_argmin(cost: Tensor, hyps: DisparityHypotheses) -> Tensor:
    """Expected disparity under a softmax over negated costs.

    ``cost`` is (D, H, W); the result is (H, W), always inside
    [hyps.d_min, hyps.d_max] because it is a convex combination.
    """
    if cost.ndim != 3:
        raise ValueError(f"cost volume must be (D, H, W), got {cost.shape}")
    if cost.shape[0] != hyps.count:
        raise ValueError(
            f"cost volume has {cost.shape[0]} levels, hypotheses have {hyps.count}")
    logits = -cost
    shift = Tensor(np.max(logits.data, axis=0, keepdims=True))
    z = (logits - shift).exp()
    p = z / z.sum(axis=0, keepdims=True)
    disp = Tensor(hyps.values.reshape(-1, 1, 1).astype(cost.dtype))
    return (p * disp).sum(axis=0)


def softmax_probabilities(cost: Tensor, hyps: DisparityHypotheses) -> np.ndarray:
    """Normalized probability volume (for diagnostics and invariants)."""
    logits = -cost.data
    shift = logits.max(axis=0, keepdims=True)
    z = np.exp(logits - shift)
    return z / z.sum(axis=0, keepdims=True)


class DepthNet(nn.Module):
    """Full stereo disparity predictor: features, volumes, filter, readout."""

    def __init__(self, hyps: DisparityHypotheses, seed: int = 0,
                 in_channels: int = 3, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.hyps = hyps
        self.features = FeatureExtractor(rng, in_channels=in_channels, dtype=dtype)
        self.filter = VolumeFilter(rng, dtype=dtype)

    def forward(self, x_l: Tensor, x_r: Tensor) -> Tuple[Tensor, Tensor]:
        return self.predict_disparities(x_l, x_r)

    def predict_disparities(self, x_l: Tensor, x_r: Tensor) -> Tuple[Tensor, Tensor]:
        """Rectified pair (1, 3, H, W) each -> full-resolution (H, W) disparities."""
        if x_l.shape != x_r.shape:
            raise ValueError(f"stereo shapes differ: {x_l.shape} vs {x_r.shape}")
        feats = self.features(concat([x_l, x_r], axis=0))
        f_l, f_r = feats[0:1], feats[1:2]
        v_l = build_feature_volume(f_l, f_r, self.hyps, "left")
        v_r = build_feature_volume(f_r, f_l, self.hyps, "right")
        costs = self.filter(concat([v_l, v_r], axis=0))
        d_l = soft_argmin(costs[0, 0], self.hyps)
        d_r = soft_argmin(costs[1, 0], self.hyps)
        return d_l, d_r
