"""End-to-end novel view rendering: disparities -> depth -> forward warp -> inpaint."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import RunConfig
from .depthnet import DepthNet
from .geometry import WarpedView, disparity_to_depth, warp_reference_set
from .inpaintnet import (MODEL_NAME_CONV, MODEL_NAME_RESIDUAL, InpaintNet,
                         median_fusion, stack_warped_views)
from .tensor import Tensor, no_grad
from .trainer import FrozenDepthPredictor, hypotheses_from_config
from .data.sequences import SequenceSample


@dataclass
class RenderResult:
    rendering: np.ndarray                 # (3, H, W) in [0, 1]
    warped: List[WarpedView]
    timings_s: Dict[str, float]
    mae_255: Optional[float] = None       # against the held-out target
    clamped_disparities: int = 0

    @property
    def total_time_s(self) -> float:
        return sum(self.timings_s.values())


def load_inpaint_net(path, cfg: RunConfig) -> InpaintNet:
    name, state = load_checkpoint(path)
    if name not in (MODEL_NAME_RESIDUAL, MODEL_NAME_CONV):
        raise CheckpointError(f"{path}: model '{name}' is not an inpainting network")
    net = InpaintNet(n_views=cfg.inpaint.n_views, seed=cfg.seed,
                     residual=(name == MODEL_NAME_RESIDUAL),
                     use_bn=cfg.inpaint.use_bn,
                     output_activation=cfg.inpaint.output_activation)
    net.load_state_dict(state)
    net.eval()
    return net


def render_window(sample: SequenceSample, cfg: RunConfig,
                  depth_net: Optional[FrozenDepthPredictor],
                  inpaint_net: Optional[InpaintNet],
                  use_gt_depth: bool = False,
                  use_median: bool = False) -> RenderResult:
    """Render the target view of a window.

    Depth comes from the frozen network unless ``use_gt_depth``; the final
    fusion is the inpainting network unless ``use_median``.
    """
    t0 = time.perf_counter()
    clamped = 0
    depths = []
    if use_gt_depth:
        if sample.ref_gt_depths is None:
            raise ValueError("sample carries no ground-truth depth")
        depths = list(sample.ref_gt_depths)
    else:
        if depth_net is None:
            raise ValueError("need a depth checkpoint (or ground-truth depth)")
        for ref in sample.refs:
            disp = depth_net.disparity(ref)
            z, n_clamped = disparity_to_depth(disp, sample.cam)
            clamped += n_clamped
            depths.append(z)
    t_depth = time.perf_counter()
    warped = warp_reference_set([r.left.astype(np.float64) for r in sample.refs],
                                depths, sample.cam, sample.rel_poses)
    t_warp = time.perf_counter()
    if use_median:
        rendering, _ = median_fusion(warped)
    else:
        if inpaint_net is None:
            raise ValueError("need an inpainting checkpoint (or --median)")
        expected = inpaint_net.n_views
        if len(warped) != expected:
            raise ValueError(f"window has {len(warped)} views, network expects {expected}")
        with no_grad():
            out = inpaint_net(Tensor(stack_warped_views(warped)[None]))
        rendering = out.data[0]
    t_inpaint = time.perf_counter()
    mae = float(np.abs(rendering - sample.target.left).mean() * 255.0)
    return RenderResult(rendering=rendering, warped=warped,
                        timings_s={"depth": t_depth - t0,
                                   "warp": t_warp - t_depth,
                                   "inpaint": t_inpaint - t_warp},
                        mae_255=mae, clamped_disparities=clamped)


def save_render_artifacts(result: RenderResult, out_dir) -> List[Path]:
    """Write the rendering plus per-view warped images and masks as PNGs."""
    from .data.kitti import _save_png
    from PIL import Image
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / "rendered.png"
    _save_png(path, result.rendering)
    written.append(path)
    for i, wv in enumerate(result.warped):
        p = out_dir / f"warped_{i}.png"
        _save_png(p, wv.rgb)
        written.append(p)
        m = out_dir / f"mask_{i}.png"
        Image.fromarray((wv.mask * 255).astype(np.uint8), mode="L").save(m)
        written.append(m)
    return written
