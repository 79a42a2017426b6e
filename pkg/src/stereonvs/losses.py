"""Unsupervised training objective: photometric, consistency and smoothness terms.

The total objective is ``lambda0 * L_P + lambda1 * L_LR + lambda2 * L_S``.
The photometric term mixes a per-element L1 with multi-window structural
dissimilarity, DSSIM = (1 - SSIM) / 2; reading the similarity term as raw
SSIM would reward mismatches, so the dissimilarity form is used.

Loss terms that consume warped images can mask out a one-pixel border plus
pixels whose sampling coordinates clamped; passing no mask reproduces the
plain unmasked formulas exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import ops
from .geometry import StereoConvention, warp_stereo
from .tensor import Tensor

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective and its photometric sub-terms."""
    lambda0: float = 5.0
    lambda1: float = 0.01
    lambda2: float = 0.0005
    lambda_p1: float = 0.2
    lambda_p3: float = 0.8
    lambda_p5: float = 0.2
    lambda_p7: float = 0.2
    ssim_windows: Tuple[int, ...] = (3, 5, 7)

    def __post_init__(self):
        values = (self.lambda0, self.lambda1, self.lambda2, self.lambda_p1,
                  self.lambda_p3, self.lambda_p5, self.lambda_p7)
        if any(v < 0 for v in values):
            raise ValueError("loss weights must be non-negative")

    def ssim_weight(self, window: int) -> float:
        return {3: self.lambda_p3, 5: self.lambda_p5, 7: self.lambda_p7}[window]


def shrink_mask(mask: np.ndarray, border: int = 1) -> np.ndarray:
    """Zero out a border strip of the given width."""
    out = mask.copy()
    if border > 0:
        out[:border] = 0
        out[-border:] = 0
        out[:, :border] = 0
        out[:, -border:] = 0
    return out


def _uniform_filter_valid(x: Tensor, window: int) -> Tensor:
    """Valid-mode box average per channel of a (C, H, W) tensor."""
    c, h, w = x.shape
    kernel = Tensor(np.full((1, 1, window, window), 1.0 / (window * window),
                            dtype=x.dtype))
    return ops.conv2d(x.reshape(c, 1, h, w), kernel, None, stride=1, padding=0)


def ssim(a: Tensor, b: Tensor, window: int) -> Tensor:
    """Per-pixel SSIM map over valid window positions, constants on [0,1] range.

    Returns a (C, H-window+1, W-window+1) tensor of values in [-1, 1].
    """
    if window % 2 == 0:
        raise ValueError(f"SSIM window must be odd, got {window}")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mu_a = _uniform_filter_valid(a, window)
    mu_b = _uniform_filter_valid(b, window)
    sigma_a = _uniform_filter_valid(a * a, window) - mu_a * mu_a
    sigma_b = _uniform_filter_valid(b * b, window) - mu_b * mu_b
    sigma_ab = _uniform_filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * sigma_ab + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (sigma_a + sigma_b + SSIM_C2)
    out = num / den
    c, h, w = a.shape
    return out.reshape(c, h - window + 1, w - window + 1)


def _masked_mean(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Mean of x over pixels where mask is set; plain mean without a mask.

    ``x`` is (C, H, W) or (H, W); the mask is (H, W).
    """
    if mask is None:
        return x.mean()
    count = float(np.count_nonzero(mask))
    if count == 0:
        raise ValueError("mask excludes every pixel")
    m = Tensor(mask.astype(x.dtype))
    channels = x.shape[0] if x.ndim == 3 else 1
    return (x * m).sum() / (count * channels)


def _window_valid_mask(mask: Optional[np.ndarray], window: int) -> Optional[np.ndarray]:
    """Window positions whose full support lies inside the pixel mask."""
    if mask is None:
        return None
    sums = _uniform_filter_valid(Tensor(mask[None].astype(np.float64)), window)
    return sums.data[0] > 1.0 - 1e-9


def dssim_mean(a: Tensor, b: Tensor, window: int,
               mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean structural dissimilarity (1 - SSIM) / 2 over valid windows."""
    s = ssim(a, b, window)
    return _masked_mean((1.0 - s) * 0.5, _window_valid_mask(mask, window))


def photometric_loss(x_l: Tensor, x_r: Tensor, recon_l: Tensor, recon_r: Tensor,
                     weights: LossWeights = LossWeights(),
                     mask_l: Optional[np.ndarray] = None,
                     mask_r: Optional[np.ndarray] = None) -> Tensor:
    """L1 plus multi-window DSSIM between images and their reconstructions."""
    for name, (x, r) in {"left": (x_l, recon_l), "right": (x_r, recon_r)}.items():
        if x.shape != r.shape:
            raise ValueError(
                f"{name} image {x.shape} and reconstruction {r.shape} differ in shape")
    loss = weights.lambda_p1 * (_masked_mean((recon_l - x_l).abs(), mask_l)
                                + _masked_mean((recon_r - x_r).abs(), mask_r))
    for s in weights.ssim_windows:
        w_s = weights.ssim_weight(s)
        if w_s == 0:
            continue
        loss = loss + w_s * (dssim_mean(recon_l, x_l, s, mask_l)
                             + dssim_mean(recon_r, x_r, s, mask_r))
    return loss


def lr_consistency_loss(d_l: Tensor, d_r: Tensor, border: Optional[int] = 1,
                        convention: StereoConvention = StereoConvention()) -> Tensor:
    """Each disparity map, warped by itself into the other view, must match it."""
    if d_l.shape != d_r.shape:
        raise ValueError(f"shape mismatch: {d_l.shape} vs {d_r.shape}")
    recon_l, valid_l = warp_stereo(d_r, d_l, "left", convention)
    recon_r, valid_r = warp_stereo(d_l, d_r, "right", convention)
    if border is None:
        mask_l = mask_r = None
    else:
        mask_l = shrink_mask(valid_l.astype(np.float64), border)
        mask_r = shrink_mask(valid_r.astype(np.float64), border)
    return (_masked_mean((recon_l - d_l).abs(), mask_l)
            + _masked_mean((recon_r - d_r).abs(), mask_r))


def smoothness_loss(d: Tensor, x: Tensor) -> Tensor:
    """Edge-aware disparity smoothness with forward differences.

    Disparity gradients are suppressed by exp(-|image gradient|), the image
    gradient magnitude being averaged over color channels.
    """
    if d.ndim != 2:
        raise ValueError(f"disparity must be (H, W), got {d.shape}")
    if x.ndim != 3 or x.shape[1:] != d.shape:
        raise ValueError(f"image {x.shape} does not match disparity {d.shape}")
    dx_d = (d[:, 1:] - d[:, :-1]).abs()
    dy_d = (d[1:, :] - d[:-1, :]).abs()
    gx = (x[:, :, 1:] - x[:, :, :-1]).abs().mean(axis=0)
    gy = (x[:, 1:, :] - x[:, :-1, :]).abs().mean(axis=0)
    term_x = (dx_d * (-gx).exp()).mean()
    term_y = (dy_d * (-gy).exp()).mean()
    return term_x + term_y


def total_loss(photometric: Tensor, lr_consistency: Tensor, smoothness: Tensor,
               weights: LossWeights = LossWeights()) -> Tensor:
    """Weighted sum of the three objective components."""
    return (weights.lambda0 * photometric
            + weights.lambda1 * lr_consistency
            + weights.lambda2 * smoothness)


def inpaint_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over pixels and channels."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return (pred - target).abs().mean()
