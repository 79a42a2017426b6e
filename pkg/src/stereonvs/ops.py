"""Convolution, pooling and upsampling primitives.

All spatial operators share one n-dimensional im2col/col2im core so the 2D
and 3D variants cannot drift apart.  Columns are laid out as
(N, C*prod(kernel), prod(out)) with the output positions minor, which makes
every gather/scatter a handful of vectorised slice copies per kernel tap and
every reshape free; forward and backward passes then lower to one BLAS
matmul per sample.  Everything is deterministic for a fixed BLAS
configuration.
"""
from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np

from .tensor import Tensor, make_op


def _tuple_nd(v, nd: int, name: str) -> tuple:
    if isinstance(v, int):
        return (v,) * nd
    t = tuple(int(x) for x in v)
    if len(t) != nd:
        raise ValueError(f"{name} must have {nd} entries, got {len(t)}")
    return t


def conv_out_extent(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _taps(kernel: tuple):
    return itertools.product(*(range(k) for k in kernel))


def _tap_slices(tap: tuple, stride: tuple, out_spatial: tuple) -> tuple:
    return (slice(None), slice(None)) + tuple(
        slice(tap[d], tap[d] + stride[d] * out_spatial[d], stride[d])
        for d in range(len(tap)))


def _im2col(xp: np.ndarray, kernel: tuple, stride: tuple, out_spatial: tuple) -> np.ndarray:
    """Padded (N, C, *P) array -> columns (N, C*prod(K), prod(O))."""
    n, c = xp.shape[:2]
    cols = np.empty((n, c, *kernel, *out_spatial), dtype=xp.dtype)
    for tap in _taps(kernel):
        cols[(slice(None), slice(None)) + tap] = xp[_tap_slices(tap, stride, out_spatial)]
    return cols.reshape(n, c * int(np.prod(kernel)), int(np.prod(out_spatial)))


def _col2im(cols: np.ndarray, n: int, c: int, padded_spatial: tuple,
            kernel: tuple, stride: tuple, out_spatial: tuple) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add columns back into a padded array."""
    xp = np.zeros((n, c, *padded_spatial), dtype=cols.dtype)
    cols = cols.reshape(n, c, *kernel, *out_spatial)
    for tap in _taps(kernel):
        xp[_tap_slices(tap, stride, out_spatial)] += cols[(slice(None), slice(None)) + tap]
    return xp


def _pad_spatial(x: np.ndarray, padding: tuple) -> np.ndarray:
    if not any(padding):
        return x
    pw = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    return np.pad(x, pw)


def _crop_spatial(xp: np.ndarray, padding: tuple) -> np.ndarray:
    if not any(padding):
        return xp
    sl = (slice(None), slice(None)) + tuple(
        slice(p, None if p == 0 else -p) for p in padding)
    return np.ascontiguousarray(xp[sl])


def _batch_matmul(a: np.ndarray, bs: np.ndarray, out_rows: int) -> np.ndarray:
    """a (R, K) times every bs[i] (K, M) -> (N, R, M).

    BLAS runs far faster with many rows than many columns here, so the
    product is computed as (bs[i]^T a^T)^T; the transposes are flags for
    BLAS and one small contiguous copy for the result.  The rank-1 case
    broadcasts instead (BLAS packing overhead is pathological there).
    """
    n = bs.shape[0]
    if a.shape[1] == 1:
        return np.ascontiguousarray(a.reshape(1, out_rows, 1) * bs)
    out = np.empty((n, out_rows, bs.shape[2]), dtype=bs.dtype)
    if out_rows <= bs.shape[2] // 4:
        at = a.T
        for i in range(n):
            out[i] = np.matmul(bs[i].T, at).T
    else:
        for i in range(n):
            np.matmul(a, bs[i], out=out[i])
    return out


def _check_conv_input(x: Tensor, w: Tensor, nd: int, op: str):
    if x.ndim != nd + 2:
        raise ValueError(f"{op}: input must be (N, C, {nd} spatial dims), got shape {x.shape}")
    if w.ndim != nd + 2:
        raise ValueError(f"{op}: weight must have {nd + 2} dims, got shape {w.shape}")


def _conv_nd(x: Tensor, w: Tensor, b: Optional[Tensor], stride, padding, nd: int) -> Tensor:
    op = f"conv{nd}d"
    _check_conv_input(x, w, nd, op)
    co, ci = w.shape[0], w.shape[1]
    kernel = w.shape[2:]
    if x.shape[1] != ci:
        raise ValueError(f"{op}: input has {x.shape[1]} channels, weight expects {ci}")
    stride = _tuple_nd(stride, nd, "stride")
    padding = _tuple_nd(padding, nd, "padding")
    in_spatial = x.shape[2:]
    out_spatial = tuple(conv_out_extent(in_spatial[d], kernel[d], stride[d], padding[d])
                        for d in range(nd))
    if any(o < 1 for o in out_spatial):
        raise ValueError(
            f"{op}: spatial extents {in_spatial} admit no output position for "
            f"kernel {kernel}, stride {stride}, padding {padding}")
    if b is not None and b.shape != (co,):
        raise ValueError(f"{op}: bias shape {b.shape} != ({co},)")

    n = x.shape[0]
    xp = _pad_spatial(x.data, padding)
    cols = _im2col(xp, kernel, stride, out_spatial)
    w2 = w.data.reshape(co, -1)
    y = _batch_matmul(w2, cols, co)
    if b is not None:
        y += b.data.reshape(1, co, 1)
    out = y.reshape(n, co, *out_spatial)
    padded_spatial = xp.shape[2:]

    def backward(g):
        gmat = g.reshape(n, co, -1)
        if w.requires_grad:
            dw2 = gmat[0] @ cols[0].T
            for i in range(1, n):
                dw2 += gmat[i] @ cols[i].T
            w._accumulate(dw2.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(gmat.sum(axis=(0, 2)))
        if x.requires_grad:
            dcols = _batch_matmul(w2.T, gmat, w2.shape[1])
            dxp = _col2im(dcols, n, ci, padded_spatial, kernel, stride, out_spatial)
            x._accumulate(_crop_spatial(dxp, padding))

    parents = (x, w) if b is None else (x, w, b)
    return make_op(out, parents, backward)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride=1, padding=0) -> Tensor:
    """2D convolution of (N, C, H, W) with weight (Co, Ci, kh, kw)."""
    return _conv_nd(x, w, b, stride, padding, nd=2)


def conv3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride=1, padding=0) -> Tensor:
    """3D convolution of (N, C, D, H, W) with weight (Co, Ci, kd, kh, kw)."""
    return _conv_nd(x, w, b, stride, padding, nd=3)


def conv_transpose3d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                     stride=1, padding=0,
                     output_spatial: Optional[Sequence[int]] = None) -> Tensor:
    """Adjoint of ``conv3d`` for fixed weights.

    Weight layout is (Ci, Co, kd, kh, kw).  Because stride-2 output extents
    are ambiguous, the target shape must be given explicitly via
    ``output_spatial``.
    """
    nd = 3
    op = "conv_transpose3d"
    _check_conv_input(x, w, nd, op)
    ci, co = w.shape[0], w.shape[1]
    kernel = w.shape[2:]
    if x.shape[1] != ci:
        raise ValueError(f"{op}: input has {x.shape[1]} channels, weight expects {ci}")
    stride = _tuple_nd(stride, nd, "stride")
    padding = _tuple_nd(padding, nd, "padding")
    in_spatial = x.shape[2:]
    if output_spatial is None:
        raise ValueError(f"{op}: output_spatial is required (stride makes the shape ambiguous)")
    out_spatial = tuple(int(s) for s in output_spatial)
    for d in range(nd):
        expect = conv_out_extent(out_spatial[d], kernel[d], stride[d], padding[d])
        if expect != in_spatial[d]:
            raise ValueError(
                f"{op}: output_spatial {out_spatial} is inconsistent with input "
                f"{in_spatial} for kernel {kernel}, stride {stride}, padding {padding}")
    if b is not None and b.shape != (co,):
        raise ValueError(f"{op}: bias shape {b.shape} != ({co},)")

    n = x.shape[0]
    m = int(np.prod(in_spatial))
    padded_spatial = tuple(out_spatial[d] + 2 * padding[d] for d in range(nd))
    xmat = x.data.reshape(n, ci, m)
    w2 = w.data.reshape(ci, -1)
    cols = _batch_matmul(w2.T, xmat, w2.shape[1])
    yp = _col2im(cols, n, co, padded_spatial, kernel, stride, in_spatial)
    y = _crop_spatial(yp, padding)
    if b is not None:
        y += b.data.reshape(1, co, *([1] * nd))

    def backward(g):
        gp = _pad_spatial(g, padding)
        gcols = _im2col(gp, kernel, stride, in_spatial)
        if x.requires_grad:
            dx = _batch_matmul(w2, gcols, ci)
            x._accumulate(dx.reshape(x.shape))
        if w.requires_grad:
            dw2 = xmat[0] @ gcols[0].T
            for i in range(1, n):
                dw2 += xmat[i] @ gcols[i].T
            w._accumulate(dw2.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, w) if b is None else (x, w, b)
    return make_op(y, parents, backward)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Fused per-(sample, channel) normalization over spatial dims.

    Returns the normalized tensor plus the raw per-(n, c) batch statistics
    (mean, biased variance) for running-average upkeep.
    """
    axes = tuple(range(2, x.ndim))
    cshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)

    def backward(g):
        sum_axes = (0,) + axes
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=sum_axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=sum_axes))
        if x.requires_grad:
            gg = g * gamma.data.reshape(cshape)
            m1 = gg.mean(axis=axes, keepdims=True)
            m2 = (gg * xhat).mean(axis=axes, keepdims=True)
            x._accumulate(inv * (gg - m1 - xhat * m2))

    return make_op(out, (x, gamma, beta), backward), mu, var


def avg_pool2d(x: Tensor, factor: int = 2) -> Tensor:
    """Non-overlapping average pooling over (N, C, H, W)."""
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"avg_pool2d: extents ({h}, {w}) not divisible by {factor}")
    f = factor

    def backward(g):
        if x.requires_grad:
            up = np.repeat(np.repeat(g, f, axis=2), f, axis=3)
            x._accumulate(up / (f * f))

    data = x.data.reshape(n, c, h // f, f, w // f, f).mean(axis=(3, 5))
    return make_op(np.ascontiguousarray(data), (x,), backward)


def upsample_nearest2d(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling over (N, C, H, W)."""
    n, c, h, w = x.shape
    f = factor
    data = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)))

    return make_op(data, (x,), backward)
