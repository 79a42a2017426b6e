"""Network building blocks: parameters, modules, conv layers, batch norm.

Layer semantics follow the conventions used throughout the package:

* "ReLU + BN" blocks run conv -> ReLU -> BN, in that order (flippable via
  ``bn_before_relu`` where a layer exposes it).
* Batch normalization in training mode normalizes each sample over its
  spatial dims per channel (instance statistics).  With mini-batches of one
  this is the only non-degenerate choice; it also keeps samples in a batch
  independent.  Running statistics use momentum 0.1 and are consumed in eval
  mode.
* Weights are Kaiming-uniform (fan-in), biases zero, gamma one, beta zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from . import ops
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a convolution layer."""
    kernel: tuple
    stride: tuple
    padding: tuple
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError("channel counts must be positive")
        if not (len(self.kernel) == len(self.stride) == len(self.padding)):
            raise ValueError("kernel, stride and padding must agree on spatial rank")

    def out_spatial(self, in_spatial: Tuple[int, ...]) -> Tuple[int, ...]:
        out = tuple(ops.conv_out_extent(s, k, st, p) for s, k, st, p
                    in zip(in_spatial, self.kernel, self.stride, self.padding))
        if any(o < 1 for o in out):
            raise ValueError(
                f"input spatial {in_spatial} gives empty output for {self}")
        return out


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True)


def kaiming_uniform(shape: tuple, fan_in: int, rng: np.random.Generator,
                    dtype=np.float32) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Module:
    """Minimal module container with named parameters and buffers."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def _set_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def modules(self) -> Iterator["Module"]:
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for mod_name, m in self._modules.items():
            yield from m.named_parameters(prefix + mod_name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for mod_name, m in self._modules.items():
            yield from m.named_buffers(prefix + mod_name + ".")

    def state_dict(self) -> dict:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict):
        seen = set()
        for name, p in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint is missing parameter '{name}'")
            arr = state[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(
                    f"parameter '{name}': checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.data.dtype).copy()
            seen.add(name)
        for full_name, (mod, local) in self._buffer_owners().items():
            if full_name not in state:
                raise KeyError(f"checkpoint is missing buffer '{full_name}'")
            arr = state[full_name]
            cur = mod._buffers[local]
            if tuple(arr.shape) != cur.shape:
                raise ValueError(
                    f"buffer '{full_name}': checkpoint shape {arr.shape} != model shape {cur.shape}")
            mod._set_buffer(local, arr.astype(cur.dtype).copy())
            seen.add(full_name)
        extra = set(state) - seen
        if extra:
            raise KeyError(f"checkpoint has unexpected entries: {sorted(extra)}")

    def _buffer_owners(self, prefix: str = "") -> dict:
        entries = {prefix + local: (self, local) for local in self._buffers}
        for mod_name, m in self._modules.items():
            entries.update(m._buffer_owners(prefix + mod_name + "."))
        return entries

    def train(self):
        for m in self.modules():
            object.__setattr__(m, "training", True)
        return self

    def eval(self):
        for m in self.modules():
            object.__setattr__(m, "training", False)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def to_dtype(self, dtype):
        """Cast all parameters and buffers in place (float32 <-> float64)."""
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for mod in self.modules():
            for name in list(mod._buffers):
                mod._set_buffer(name, mod._buffers[name].astype(dtype))
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class _ConvBase(Module):
    def __init__(self, nd, in_channels, out_channels, kernel, stride, padding,
                 rng: np.random.Generator, bias: bool = True, transposed: bool = False,
                 dtype=np.float32):
        super().__init__()
        kernel = (kernel,) * nd if isinstance(kernel, int) else tuple(kernel)
        self.spec = ConvSpec(kernel=kernel,
                             stride=(stride,) * nd if isinstance(stride, int) else tuple(stride),
                             padding=(padding,) * nd if isinstance(padding, int) else tuple(padding),
                             in_channels=in_channels, out_channels=out_channels)
        self.transposed = transposed
        fan_in = in_channels * int(np.prod(kernel))
        wshape = ((in_channels, out_channels, *kernel) if transposed
                  else (out_channels, in_channels, *kernel))
        self.weight = Parameter(kaiming_uniform(wshape, fan_in, rng, dtype), dtype=dtype)
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), dtype=dtype) if bias else None


class Conv2d(_ConvBase):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 padding=None, bias=True, dtype=np.float32):
        if padding is None:
            padding = kernel // 2 if isinstance(kernel, int) else tuple(k // 2 for k in kernel)
        super().__init__(2, in_channels, out_channels, kernel, stride, padding, rng,
                         bias=bias, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias,
                          stride=self.spec.stride, padding=self.spec.padding)


class Conv3d(_ConvBase):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 padding=None, bias=True, dtype=np.float32):
        if padding is None:
            padding = kernel // 2 if isinstance(kernel, int) else tuple(k // 2 for k in kernel)
        super().__init__(3, in_channels, out_channels, kernel, stride, padding, rng,
                         bias=bias, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv3d(x, self.weight, self.bias,
                          stride=self.spec.stride, padding=self.spec.padding)


class ConvTranspose3d(_ConvBase):
    def __init__(self, in_channels, out_channels, kernel, rng, stride=1,
                 padding=None, bias=True, dtype=np.float32):
        if padding is None:
            padding = kernel // 2 if isinstance(kernel, int) else tuple(k // 2 for k in kernel)
        super().__init__(3, in_channels, out_channels, kernel, stride, padding, rng,
                         bias=bias, transposed=True, dtype=dtype)

    def forward(self, x: Tensor, output_spatial) -> Tensor:
        return ops.conv_transpose3d(x, self.weight, self.bias,
                                    stride=self.spec.stride, padding=self.spec.padding,
                                    output_spatial=output_spatial)


class BatchNorm(Module):
    """Per-channel normalization over spatial dims, any (N, C, *S) input."""

    def __init__(self, channels: int, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.gamma = Parameter(np.ones(channels, dtype=dtype), dtype=dtype)
        self.beta = Parameter(np.zeros(channels, dtype=dtype), dtype=dtype)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"batch_norm: expected {self.channels} channels, got {x.shape[1]}")
        cshape = (1, self.channels) + (1,) * (x.ndim - 2)
        if self.training:
            out, mu, var = ops.channel_norm(x, self.gamma, self.beta, BN_EPS)
            batch_mean = mu.mean(axis=0).reshape(self.channels)
            batch_var = var.mean(axis=0).reshape(self.channels)
            self._set_buffer("running_mean",
                             ((1 - BN_MOMENTUM) * self.running_mean
                              + BN_MOMENTUM * batch_mean).astype(x.dtype))
            self._set_buffer("running_var",
                             ((1 - BN_MOMENTUM) * self.running_var
                              + BN_MOMENTUM * batch_var).astype(x.dtype))
            return out
        gamma = self.gamma.reshape(cshape)
        beta = self.beta.reshape(cshape)
        rm = Tensor(self.running_mean.reshape(cshape))
        rv = Tensor(self.running_var.reshape(cshape))
        inv = (rv + BN_EPS) ** -0.5
        return (x - rm) * inv * gamma + beta


class ResidualBlock(Module):
    """Two equal-channel 3x3 convs with identity skip.

    Each conv is post-activated (conv -> ReLU -> optional BN); the skip adds
    the raw input, so input and output shapes are identical.
    """

    def __init__(self, channels: int, rng, kernel: int = 3, use_bn: bool = True,
                 dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, kernel, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, kernel, rng, dtype=dtype)
        self.use_bn = use_bn
        if use_bn:
            self.bn1 = BatchNorm(channels, dtype=dtype)
            self.bn2 = BatchNorm(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(x).relu()
        if self.use_bn:
            h = self.bn1(h)
        h = self.conv2(h).relu()
        if self.use_bn:
            h = self.bn2(h)
        return x + h
