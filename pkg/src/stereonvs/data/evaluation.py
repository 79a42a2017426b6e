"""Rendering error metric: mean absolute brightness error on the [0, 255] scale."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np


@dataclass
class EvalReport:
    """Per-pixel-per-channel mean absolute error, averaged over frames."""
    mean_abs_error: float
    per_frame: List[float] = field(default_factory=list)
    hole_fraction: Optional[float] = None

    def __post_init__(self):
        if self.mean_abs_error < 0:
            raise ValueError("error must be non-negative")


def evaluate(renders: Sequence[np.ndarray], targets: Sequence[np.ndarray],
             hole_masks: Optional[Sequence[np.ndarray]] = None) -> EvalReport:
    """Compare [0, 1] renders against targets; report errors on [0, 255].

    ``hole_masks`` (1 = pixel left unfilled) only feeds the hole statistics.
    """
    if len(renders) != len(targets):
        raise ValueError(f"got {len(renders)} renders but {len(targets)} targets")
    if len(renders) == 0:
        raise ValueError("nothing to evaluate")
    per_frame = []
    for i, (render, target) in enumerate(zip(renders, targets)):
        if render.shape != target.shape:
            raise ValueError(
                f"frame {i}: render {render.shape} vs target {target.shape}")
        per_frame.append(float(np.abs(render - target).mean() * 255.0))
    holes = None
    if hole_masks is not None:
        holes = float(np.mean([m.astype(np.float64).mean() for m in hole_masks]))
    return EvalReport(mean_abs_error=float(np.mean(per_frame)),
                      per_frame=per_frame, hole_fraction=holes)
