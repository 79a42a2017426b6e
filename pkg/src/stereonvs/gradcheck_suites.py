"""Finite-difference suites for every differentiable operation.

Each builder returns ``(loss_fn, inputs)``: a scalar-valued closure and the
tensors whose analytic gradients are to be verified.  Inputs are sampled
away from non-smooth points (ReLU/abs kinks, bilinear cell boundaries) so
central differences are valid.  All suites run in float64.
"""
from __future__ import annotations

import numpy as np

from . import losses, nn, ops
from .depthnet import (DepthNet, DisparityHypotheses, build_feature_volume,
                       soft_argmin)
from .geometry import bilinear_sample, warp_stereo
from .gradcheck import fixed_weights, rand_tensor, register_suite
from .tensor import Tensor


@register_suite("conv2d")
def _conv2d(rng):
    x = rand_tensor(rng, (2, 2, 4, 4))
    w = rand_tensor(rng, (3, 2, 3, 3))
    b = rand_tensor(rng, (3,))
    wt = fixed_weights((2, 3, 2, 2), rng)
    return lambda: (ops.conv2d(x, w, b, stride=2, padding=1) * wt).sum(), [x, w, b]


@register_suite("conv2d_stride1")
def _conv2d_s1(rng):
    x = rand_tensor(rng, (1, 3, 4, 4))
    w = rand_tensor(rng, (2, 3, 3, 3))
    b = rand_tensor(rng, (2,))
    wt = fixed_weights((1, 2, 4, 4), rng)
    return lambda: (ops.conv2d(x, w, b, stride=1, padding=1) * wt).sum(), [x, w, b]


@register_suite("conv3d")
def _conv3d(rng):
    x = rand_tensor(rng, (2, 2, 4, 4, 4))
    w = rand_tensor(rng, (2, 2, 3, 3, 3))
    b = rand_tensor(rng, (2,))
    wt = fixed_weights((2, 2, 2, 2, 2), rng)
    return lambda: (ops.conv3d(x, w, b, stride=2, padding=1) * wt).sum(), [x, w, b]


@register_suite("conv_transpose3d")
def _tconv3d(rng):
    x = rand_tensor(rng, (1, 3, 2, 2, 2))
    w = rand_tensor(rng, (3, 2, 3, 3, 3))
    b = rand_tensor(rng, (2,))
    wt = fixed_weights((1, 2, 4, 4, 4), rng)
    f = lambda: (ops.conv_transpose3d(x, w, b, stride=2, padding=1,
                                      output_spatial=(4, 4, 4)) * wt).sum()
    return f, [x, w, b]


@register_suite("batch_norm_train")
def _bn_train(rng):
    x = rand_tensor(rng, (2, 3, 4, 4))
    gamma = rand_tensor(rng, (3,), lo=0.5, hi=1.5)
    beta = rand_tensor(rng, (3,))
    wt = fixed_weights((2, 3, 4, 4), rng)
    return lambda: (ops.channel_norm(x, gamma, beta, 1e-5)[0] * wt).sum(), [x, gamma, beta]


@register_suite("batch_norm_eval")
def _bn_eval(rng):
    bn = nn.BatchNorm(3, dtype=np.float64)
    bn.register_buffer("running_mean", rng.uniform(-0.5, 0.5, 3))
    bn.register_buffer("running_var", rng.uniform(0.5, 1.5, 3))
    bn.eval()
    x = rand_tensor(rng, (2, 3, 4, 4))
    wt = fixed_weights((2, 3, 4, 4), rng)
    return lambda: (bn(x) * wt).sum(), [x, bn.gamma, bn.beta]


@register_suite("relu")
def _relu(rng):
    x = rand_tensor(rng, (3, 5), avoid_zero=0.05)
    wt = fixed_weights((3, 5), rng)
    return lambda: (x.relu() * wt).sum(), [x]


@register_suite("avg_pool2d")
def _pool(rng):
    x = rand_tensor(rng, (1, 2, 4, 4))
    wt = fixed_weights((1, 2, 2, 2), rng)
    return lambda: (ops.avg_pool2d(x) * wt).sum(), [x]


@register_suite("upsample_nearest2d")
def _upsample(rng):
    x = rand_tensor(rng, (1, 2, 3, 3))
    wt = fixed_weights((1, 2, 6, 6), rng)
    return lambda: (ops.upsample_nearest2d(x) * wt).sum(), [x]


@register_suite("residual_block")
def _resblock(rng):
    block = nn.ResidualBlock(2, np.random.default_rng(0), dtype=np.float64)
    x = rand_tensor(rng, (1, 2, 4, 4))
    wt = fixed_weights((1, 2, 4, 4), rng)
    inputs = [x] + [p for _, p in block.named_parameters()]
    return lambda: (block(x) * wt).sum(), inputs


@register_suite("bilinear_sample")
def _bilinear(rng):
    img = rand_tensor(rng, (2, 4, 4))
    # fractional in-bounds coordinates, away from integer cell edges
    gx = rng.uniform(0.2, 2.8, (3, 3))
    gy = rng.uniform(0.2, 2.8, (3, 3))
    for g in (gx, gy):
        frac = g - np.floor(g)
        g += np.where(frac < 0.15, 0.15 - frac, 0.0)
        g -= np.where(frac > 0.85, frac - 0.85, 0.0)
    grid = Tensor(np.stack([gx, gy]), requires_grad=True)
    wt = fixed_weights((2, 3, 3), rng)
    return lambda: (bilinear_sample(img, grid) * wt).sum(), [img, grid]


@register_suite("warp_stereo")
def _warp(rng):
    img = rand_tensor(rng, (2, 5, 6))
    # fractional disparities keep sample coordinates off bilinear cell edges
    disp = Tensor(rng.uniform(0.2, 0.8, (5, 6)), requires_grad=True)
    wt = fixed_weights((2, 5, 6), rng)

    def f():
        warped, _ = warp_stereo(img, disp, "left")
        return (warped * wt).sum()

    return f, [img, disp]


@register_suite("soft_argmin")
def _softargmin(rng):
    hyps = DisparityHypotheses.linear(4, 3.0)
    cost = rand_tensor(rng, (4, 3, 3), lo=-2.0, hi=2.0)
    wt = fixed_weights((3, 3), rng)
    return lambda: (soft_argmin(cost, hyps) * wt).sum(), [cost]


@register_suite("feature_volume")
def _feature_volume(rng):
    hyps = DisparityHypotheses.linear(4, 3.0)
    f_l = rand_tensor(rng, (1, 2, 3, 5))
    f_r = rand_tensor(rng, (1, 2, 3, 5))
    wt = fixed_weights((1, 4, 2, 3, 5), rng)
    return lambda: (build_feature_volume(f_l, f_r, hyps, "left") * wt).sum(), [f_l, f_r]


@register_suite("ssim")
def _ssim(rng):
    a = rand_tensor(rng, (2, 6, 6), lo=0.2, hi=0.8)
    b = rand_tensor(rng, (2, 6, 6), lo=0.2, hi=0.8)
    wt = fixed_weights((2, 4, 4), rng)
    return lambda: (losses.ssim(a, b, 3) * wt).sum(), [a, b]


@register_suite("photometric_loss")
def _photometric(rng):
    shape = (3, 8, 8)
    x_l = rand_tensor(rng, shape, lo=0.55, hi=0.9)
    x_r = rand_tensor(rng, shape, lo=0.55, hi=0.9)
    r_l = rand_tensor(rng, shape, lo=0.1, hi=0.45)
    r_r = rand_tensor(rng, shape, lo=0.1, hi=0.45)
    return lambda: losses.photometric_loss(x_l, x_r, r_l, r_r), [x_l, x_r, r_l, r_r]


@register_suite("lr_consistency_loss")
def _lr(rng):
    d_l = Tensor(rng.uniform(0.2, 0.8, (6, 6)), requires_grad=True)
    d_r = Tensor(rng.uniform(0.2, 0.8, (6, 6)), requires_grad=True)
    return lambda: losses.lr_consistency_loss(d_l, d_r), [d_l, d_r]


@register_suite("smoothness_loss")
def _smooth(rng):
    d = Tensor(np.cumsum(rng.uniform(0.1, 0.5, (5, 5)), axis=1), requires_grad=True)
    x = rand_tensor(rng, (3, 5, 5), lo=0.1, hi=0.9)
    return lambda: losses.smoothness_loss(d, x), [d, x]


@register_suite("inpaint_loss")
def _inpaint_loss(rng):
    pred = rand_tensor(rng, (1, 3, 4, 4), lo=0.1, hi=0.45)
    target = rand_tensor(rng, (1, 3, 4, 4), lo=0.55, hi=0.9)
    return lambda: losses.inpaint_loss(pred, target), [pred, target]


@register_suite("total_loss")
def _total(rng):
    p = rand_tensor(rng, ())
    lr = rand_tensor(rng, ())
    s = rand_tensor(rng, ())
    return lambda: losses.total_loss(p, lr, s), [p, lr, s]


def tiny_pipeline_check(n_samples: int = 50, seed: int = 0,
                        h: float = 1e-6) -> float:
    """Composed end-to-end gradient check at 16x16, four hypotheses.

    Finite differences over a random subset of parameter elements of the
    full unsupervised objective; returns the max normalized deviation.
    The step is finer than the per-op default because stem parameters shift
    every downstream ReLU, so truncation error grows with h near the kinks
    (in float64 the h**-1 roundoff term is still negligible at 1e-6).
    """
    rng = np.random.default_rng(seed)
    hyps = DisparityHypotheses.linear(4, 4.0)
    net = DepthNet(hyps, seed=seed, dtype=np.float64)
    net.to_dtype(np.float64)
    x_l = Tensor(rng.uniform(0.1, 0.9, (1, 3, 16, 16)))
    x_r = Tensor(rng.uniform(0.1, 0.9, (1, 3, 16, 16)))
    xl3 = x_l.reshape(3, 16, 16)
    xr3 = x_r.reshape(3, 16, 16)
    params = list(net.named_parameters())

    def loss_fn():
        # training-mode BN reads only batch statistics, so the running-stat
        # buffer updates do not perturb repeated evaluations
        d_l, d_r = net.predict_disparities(x_l, x_r)
        recon_l, _ = warp_stereo(xr3, d_l, "left")
        recon_r, _ = warp_stereo(xl3, d_r, "right")
        l_p = losses.photometric_loss(xl3, xr3, recon_l, recon_r)
        l_lr = losses.lr_consistency_loss(d_l, d_r)
        l_s = (losses.smoothness_loss(d_l, xl3)
               + losses.smoothness_loss(d_r, xr3))
        return losses.total_loss(l_p, l_lr, l_s)

    net.zero_grad()
    loss_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params}
    worst = 0.0
    for _ in range(n_samples):
        name, p = params[int(rng.integers(len(params)))]
        flat = p.data.reshape(-1)
        idx = int(rng.integers(flat.size))
        orig = flat[idx]
        flat[idx] = orig + h
        hi = float(loss_fn().data)
        flat[idx] = orig - h
        lo = float(loss_fn().data)
        flat[idx] = orig
        numeric = (hi - lo) / (2 * h)
        a = float(analytic[name].reshape(-1)[idx])
        scale = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / scale)
    return worst
