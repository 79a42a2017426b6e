"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array, every
operation records its parents and a closure that pushes gradients backwards,
and ``backward()`` walks the graph in reverse topological order.  Gradients
accumulate with ``+=`` so repeated backward passes without ``zero_grad`` sum
up, matching the usual deep-learning convention.

Element type is selectable per tensor: float32 for training, float64 for
finite-difference gradient checking.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _as_float_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A numpy-backed array that can track gradients.

    Attributes:
        data: the underlying ``np.ndarray`` (float32 or float64).
        grad: accumulated gradient of the same shape, or None.
        requires_grad: whether backward() should populate ``grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = _as_float_array(data, dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        grad_tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad_tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._non_scalar_item()

    def _non_scalar_item(self):
        raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        """Dtype-cast copy outside the graph (used when switching precision)."""
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    # -- gradient plumbing ---------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self):
        """Accumulate gradients of this scalar into every reachable tensor."""
        if self.size != 1:
            raise ValueError(
                f"backward() requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _ensure_tensor(other, self.dtype) - self

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _binary(self, other, np.divide,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, other):
        return _ensure_tensor(other, self.dtype) / self

    def __neg__(self):
        return _unary(self, np.negative, lambda g, x: -g)

    def __pow__(self, p: Scalar):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        return _unary(self, lambda x: x ** p, lambda g, x: g * p * x ** (p - 1))

    def exp(self):
        out_ref: list[np.ndarray] = []

        def fwd(x):
            out_ref.append(np.exp(x))
            return out_ref[0]

        return _unary(self, fwd, lambda g, x: g * out_ref[0])

    def log(self):
        return _unary(self, np.log, lambda g, x: g / x)

    def sqrt(self):
        out_ref: list[np.ndarray] = []

        def fwd(x):
            out_ref.append(np.sqrt(x))
            return out_ref[0]

        return _unary(self, fwd, lambda g, x: g * 0.5 / out_ref[0])

    def abs(self):
        return _unary(self, np.abs, lambda g, x: g * np.sign(x))

    def relu(self):
        return _unary(self, lambda x: np.maximum(x, 0),
                      lambda g, x: g * (x > 0))

    def clamp(self, lo: Scalar, hi: Scalar):
        return _unary(self, lambda x: np.clip(x, lo, hi),
                      lambda g, x: g * ((x >= lo) & (x <= hi)))

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def bwd(g, x):
            if axis is None:
                return np.broadcast_to(g, shape).copy()
            gk = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gk, shape).copy()

        return _unary(self, lambda x: np.sum(x, axis=axis, keepdims=keepdims), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        shape = self.shape
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= shape[a]

        def bwd(g, x):
            if axis is None:
                return np.broadcast_to(g / count, shape).copy()
            gk = g if keepdims else np.expand_dims(g, axis)
            return np.broadcast_to(gk / count, shape).copy()

        return _unary(self, lambda x: np.mean(x, axis=axis, keepdims=keepdims), bwd)

    # -- movement ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return _unary(self, lambda x: x.reshape(shape),
                      lambda g, x: g.reshape(old), contiguous=False)

    def __getitem__(self, idx):
        shape = self.shape

        def bwd(g, x):
            full = np.zeros(shape, dtype=g.dtype)
            full[idx] = g
            return full

        return _unary(self, lambda x: x[idx], bwd, contiguous=False)

    def pad(self, pad_width: Sequence[tuple]):
        """Zero padding; ``pad_width`` as in ``np.pad``."""
        pw = tuple(tuple(p) for p in pad_width)
        sl = tuple(slice(b, None if a == 0 else -a) for b, a in pw)
        return _unary(self, lambda x: np.pad(x, pw), lambda g, x: g[sl])


def _ensure_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def make_op(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    """Build a graph node from precomputed data and a backward closure.

    ``backward(grad)`` must accumulate into each parent via ``_accumulate``.
    This is the extension point modules outside the core use for custom
    primitives (convolution, bilinear sampling, ...).
    """
    parents = tuple(parents)
    requires = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    out.requires_grad = requires
    if requires:
        out._parents = parents
        out._backward = backward
    return out


def _unary(a: Tensor, fwd, bwd, contiguous: bool = True) -> Tensor:
    data = fwd(a.data)
    if contiguous:
        data = np.ascontiguousarray(data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(bwd(g, a.data))

    return make_op(data, (a,), backward)


def _binary(a: Tensor, b, fwd, bwd_a, bwd_b) -> Tensor:
    b = _ensure_tensor(b, a.dtype)
    data = fwd(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(bwd_a(g, a.data, b.data), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(bwd_b(g, a.data, b.data), b.shape))

    return make_op(data, (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis (differentiable)."""
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return make_op(data, tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack along a new axis (differentiable)."""
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.ascontiguousarray(np.take(g, i, axis=axis)))

    return make_op(data, tensors, backward)
