"""Exhaustive block-matching disparity search.

Independent of the learned pipeline: per pixel, evaluate the sum of absolute
differences over a square window for every integer disparity hypothesis,
take the argmin, and refine to sub-pixel precision with a parabola fit
through the three costs around the winner.  Used as the solvability oracle
for synthetic scenes before any training is attempted.
"""
from __future__ import annotations

import numpy as np


def _box_filter(x: np.ndarray, radius: int) -> np.ndarray:
    """Same-size box sum with edge padding, separable."""
    if radius == 0:
        return x
    p = np.pad(x, ((radius, radius), (radius, radius)), mode="edge")
    c = p.cumsum(axis=0)
    vert = c[2 * radius:] - np.vstack([np.zeros((1, c.shape[1])), c[:-2 * radius - 1]])
    c = vert.cumsum(axis=1)
    return c[:, 2 * radius:] - np.hstack([np.zeros((c.shape[0], 1)), c[:, :-2 * radius - 1]])


def block_match_disparity(x_l: np.ndarray, x_r: np.ndarray, d_max: int,
                          window: int = 7) -> np.ndarray:
    """Left-view disparity by exhaustive SAD matching with sub-pixel fit.

    Images are (3, H, W) in [0, 1]; matching assumes the rectified
    convention where the left view samples the right image at ``x - d``.
    """
    if x_l.shape != x_r.shape or x_l.ndim != 3:
        raise ValueError("expected two (C, H, W) images of equal shape")
    if window % 2 == 0:
        raise ValueError("window must be odd")
    radius = window // 2
    c, h, w = x_l.shape
    n_d = int(d_max) + 1
    costs = np.full((n_d, h, w), np.inf)
    cols = np.arange(w)
    for d in range(n_d):
        diff = np.abs(x_l[:, :, d:] - x_r[:, :, :w - d]).sum(axis=0)
        full = np.full((h, w), np.nan)
        full[:, d:] = diff
        # edge-padded box sum; positions whose shifted sample falls outside
        # the right image stay infinite so they never win
        filled = np.where(np.isnan(full), 0.0, full)
        summed = _box_filter(filled, radius)
        costs[d] = np.where(cols[None, :] >= d, summed, np.inf)
    best = costs.argmin(axis=0)
    disp = best.astype(np.float64)
    # parabola through (c[-1], c[0], c[+1]): offset = (c[-1]-c[+1]) / (2*(c[-1]-2c[0]+c[+1]))
    inner = (best > 0) & (best < n_d - 1)
    yy, xx = np.nonzero(inner)
    b = best[inner]
    c_m = costs[b - 1, yy, xx]
    c_0 = costs[b, yy, xx]
    c_p = costs[b + 1, yy, xx]
    denom = c_m - 2 * c_0 + c_p
    ok = np.isfinite(c_m) & np.isfinite(c_p) & (denom > 1e-12)
    offset = np.zeros_like(c_0)
    offset[ok] = (c_m[ok] - c_p[ok]) / (2 * denom[ok])
    disp[yy, xx] += np.clip(offset, -0.5, 0.5)
    return disp
