"""Central finite-difference gradient verification.

Every differentiable operation gets a small 64-bit test problem.  The checker
perturbs each input element by +/-h, evaluates the scalar loss, and compares
the resulting central differences against the analytic gradients from
``backward()``.  The error reported per suite is

    max_i |analytic_i - numeric_i| / max(||analytic||_inf, ||numeric||_inf, 1e-12)

aggregated over all checked tensors.  Inputs are sampled away from the kinks
of non-smooth ops (|x| floors near ReLU/abs zeros, fractional sample
coordinates for bilinear interpolation).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .tensor import Tensor

DEFAULT_H = 1e-5
DEFAULT_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance

    def as_line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"gradcheck,{self.name},{self.error:.3e},{self.tolerance:.1e},{status}"


def numeric_gradient(f: Callable[[], Tensor], x: Tensor, h: float = DEFAULT_H) -> np.ndarray:
    """Central-difference gradient of scalar f with respect to x."""
    if not x.data.flags["C_CONTIGUOUS"]:
        x.data = np.ascontiguousarray(x.data)
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f().data)
        flat[i] = orig - h
        lo = float(f().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return grad


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor],
                    h: float = DEFAULT_H) -> float:
    """Max normalized deviation between analytic and numeric gradients."""
    for t in inputs:
        t.zero_grad()
    loss = f()
    loss.backward()
    analytic = []
    for t in inputs:
        if t.grad is None:
            raise AssertionError("input did not receive a gradient")
        analytic.append(t.grad.copy())
    worst = 0.0
    for t, a in zip(inputs, analytic):
        n = numeric_gradient(f, t, h)
        scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / scale)
    return worst


# ---------------------------------------------------------------------------
# Suite registry
# ---------------------------------------------------------------------------

SuiteBuilder = Callable[[np.random.Generator], tuple]
_SUITES: Dict[str, tuple] = {}


def register_suite(name: str, tolerance: float = DEFAULT_TOL):
    def deco(builder: SuiteBuilder):
        _SUITES[name] = (builder, tolerance)
        return builder
    return deco


def suite_names() -> List[str]:
    return list(_SUITES)


def run_suites(names: Optional[Sequence[str]] = None, seed: int = 0,
               h: float = DEFAULT_H) -> List[CheckResult]:
    """Run registered finite-difference suites in 64-bit."""
    from . import gradcheck_suites  # registers on import  # noqa: F401
    selected = list(names) if names else suite_names()
    results = []
    for name in selected:
        if name not in _SUITES:
            raise KeyError(f"unknown gradcheck suite '{name}'")
        builder, tol = _SUITES[name]
        rng = np.random.default_rng(seed)
        f, inputs = builder(rng)
        err = check_gradients(f, inputs, h=h)
        results.append(CheckResult(name=name, error=err, tolerance=tol))
    return results


def rand_tensor(rng: np.random.Generator, shape, lo=-1.0, hi=1.0,
                avoid_zero: float = 0.0) -> Tensor:
    """Uniform random 64-bit tensor, optionally keeping |x| >= avoid_zero."""
    data = rng.uniform(lo, hi, size=shape)
    if avoid_zero > 0:
        sign = np.where(data >= 0, 1.0, -1.0)
        data = sign * (np.abs(data) + avoid_zero)
    return Tensor(data.astype(np.float64), requires_grad=True)


def fixed_weights(shape, rng: np.random.Generator) -> Tensor:
    """Fixed scalarization weights so every output element drives the loss.

    Builders must create these once, outside the loss closure, so the loss
    stays fixed across finite-difference evaluations.
    """
    return Tensor(rng.uniform(0.5, 1.5, size=shape))
