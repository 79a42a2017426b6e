"""Adam optimizer with bias correction, plus serializable state for resume."""
from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(RuntimeError):
    def __init__(self, param_name: str):
        super().__init__(f"non-finite gradient in parameter '{param_name}'")
        self.param_name = param_name


class Adam:
    """Standard Adam update: p -= lr * m_hat / (sqrt(v_hat) + eps).

    Missing gradients count as zero, so a step with no gradients leaves the
    parameters unchanged while still advancing the step counter.  A non-finite
    gradient aborts the whole step (no parameter is touched) and reports the
    offending parameter by name.
    """

    def __init__(self, named_params: Iterable[Tuple[str, Tensor]], lr: float = 4e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 grad_clip: Optional[float] = None):
        self.named: List[Tuple[str, Tensor]] = list(named_params)
        if len({name for name, _ in self.named}) != len(self.named):
            raise ValueError("parameter names must be unique")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.grad_clip = grad_clip
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named}

    def zero_grad(self):
        for _, p in self.named:
            p.zero_grad()

    def _gradients(self) -> Dict[str, np.ndarray]:
        grads = {}
        for name, p in self.named:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(name)
            grads[name] = g
        if self.grad_clip is not None:
            total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if total > self.grad_clip:
                scale = self.grad_clip / total
                grads = {k: g * scale for k, g in grads.items()}
        return grads

    def step(self):
        grads = self._gradients()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.named:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self) -> dict:
        state = {"step": self.step_count}
        arrays = {}
        for name in self.m:
            arrays[name + ".m"] = self.m[name]
            arrays[name + ".v"] = self.v[name]
        state["arrays"] = arrays
        return state

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step"])
        arrays = state["arrays"]
        for name, p in self.named:
            for kind, store in (("m", self.m), ("v", self.v)):
                key = f"{name}.{kind}"
                if key not in arrays:
                    raise KeyError(f"optimizer state missing '{key}'")
                arr = arrays[key]
                if arr.shape != p.data.shape:
                    raise ValueError(f"optimizer state '{key}' has shape {arr.shape}, "
                                     f"parameter has {p.data.shape}")
                store[name] = arr.astype(p.data.dtype).copy()
