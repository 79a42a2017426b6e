"""Frame windows over stereo sequences and sample providers for training.

A sequence (synthetic scene or KITTI directory) exposes ``cam``, ``len()``,
``frame(i) -> StereoFrame`` and ``pose(i)``; synthetic scenes additionally
provide ground-truth depth.  A window takes five frames at a given spacing,
holds the middle one out as target, and expresses reference poses relative
to the target camera.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..geometry import CameraModel, Pose

WINDOW_OFFSETS = (-2, -1, 1, 2)


@dataclass
class StereoFrame:
    """One rectified stereo pair plus the left camera's camera-to-world pose."""
    index: int
    left: np.ndarray          # (3, H, W) float32 in [0, 1]
    right: np.ndarray
    pose: Pose


@dataclass
class SequenceSample:
    """Five-frame window: middle frame is the target, the rest are references.

    References are ordered nearest-to-target first (ties: earlier frame).
    ``rel_poses[i]`` maps reference-i camera points into the target camera.
    """
    cam: CameraModel
    spacing: int
    target: StereoFrame
    refs: List[StereoFrame]
    rel_poses: List[Pose]
    offsets: List[int]
    ref_gt_depths: Optional[List[np.ndarray]] = None
    target_gt_depth: Optional[np.ndarray] = None


def eligible_centers(seq, spacing: int) -> List[int]:
    """Centers whose five-frame window fits inside the sequence."""
    if spacing < 1:
        raise ValueError("spacing must be >= 1")
    lo, hi = 2 * spacing, len(seq) - 1 - 2 * spacing
    return list(range(lo, hi + 1))


def sample_window(seq, center: int, spacing: int,
                  with_gt_depth: bool = False) -> SequenceSample:
    if spacing < 1:
        raise ValueError("spacing must be >= 1")
    indices = [center + k * spacing for k in WINDOW_OFFSETS]
    if indices[0] < 0 or indices[-1] >= len(seq):
        raise IndexError(
            f"window around {center} with spacing {spacing} does not fit in a "
            f"sequence of {len(seq)} frames")
    order = sorted(range(len(WINDOW_OFFSETS)),
                   key=lambda i: (abs(WINDOW_OFFSETS[i]), WINDOW_OFFSETS[i]))
    offsets = [WINDOW_OFFSETS[i] * spacing for i in order]
    target = seq.frame(center)
    inv_target = target.pose.inverse()
    refs, rel_poses = [], []
    for i in order:
        ref = seq.frame(indices[i])
        refs.append(ref)
        rel_poses.append(inv_target.compose(ref.pose))
    gt = None
    target_gt = None
    if with_gt_depth:
        if not hasattr(seq, "gt_depth"):
            raise ValueError("sequence does not provide ground-truth depth")
        gt = [seq.gt_depth(r.index) for r in refs]
        target_gt = seq.gt_depth(center)
    return SequenceSample(cam=seq.cam, spacing=spacing, target=target, refs=refs,
                          rel_poses=rel_poses, offsets=offsets, ref_gt_depths=gt,
                          target_gt_depth=target_gt)


def self_window(seq, center: int, n_views: int = 4) -> SequenceSample:
    """Degenerate debug window: the target is its own reference, repeated.

    With identity relative poses the forward warp is the identity map, so a
    rendering should reproduce the target up to inpainting error.
    """
    target = seq.frame(center)
    refs = [seq.frame(center) for _ in range(n_views)]
    gt = [seq.gt_depth(center) for _ in range(n_views)] if hasattr(seq, "gt_depth") else None
    return SequenceSample(cam=seq.cam, spacing=0, target=target, refs=refs,
                          rel_poses=[Pose.identity() for _ in range(n_views)],
                          offsets=[0] * n_views, ref_gt_depths=gt,
                          target_gt_depth=seq.gt_depth(center) if gt else None)


class StereoPairProvider:
    """Flat index over every stereo pair of a list of sequences."""

    def __init__(self, sequences: Sequence):
        self.sequences = list(sequences)
        self.index: List[Tuple[int, int]] = [
            (si, fi) for si, seq in enumerate(self.sequences) for fi in range(len(seq))]
        if not self.index:
            raise ValueError("no stereo pairs available")

    def __len__(self) -> int:
        return len(self.index)

    def get(self, i: int) -> StereoFrame:
        si, fi = self.index[i % len(self.index)]
        return self.sequences[si].frame(fi)

    @property
    def cam(self) -> CameraModel:
        return self.sequences[0].cam


class WindowProvider:
    """Flat index over every eligible window at a fixed spacing."""

    def __init__(self, sequences: Sequence, spacing: int = 1,
                 with_gt_depth: bool = False):
        self.sequences = list(sequences)
        self.spacing = spacing
        self.with_gt_depth = with_gt_depth
        self.index: List[Tuple[int, int]] = [
            (si, c) for si, seq in enumerate(self.sequences)
            for c in eligible_centers(seq, spacing)]

    def __len__(self) -> int:
        return len(self.index)

    def get(self, i: int) -> SequenceSample:
        si, c = self.index[i % len(self.index)]
        return sample_window(self.sequences[si], c, self.spacing,
                             with_gt_depth=self.with_gt_depth)
