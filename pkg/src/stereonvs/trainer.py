"""Two-stage training: disparity network first, inpainting on frozen warps.

Sample selection is counter-based (Philox keyed on seed and iteration), so a
resumed run draws exactly the samples the uninterrupted run would have
drawn.  Checkpoints carry sidecar files with the optimizer moments and the
iteration counter, making resume bit-exact.  A non-finite loss or gradient
aborts the run and keeps the last good checkpoint.

Log lines are ``iter,loss,wall_ms`` appended to ``train_<stage>.log``.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .depthnet import MODEL_NAME as DEPTH_MODEL_NAME
from .depthnet import DepthNet, DisparityHypotheses
from .geometry import disparity_to_depth, warp_reference_set, warp_stereo
from .inpaintnet import InpaintNet, stack_warped_views
from .optim import Adam, NonFiniteGradientError
from .tensor import Tensor, no_grad
from .data.sequences import SequenceSample, StereoPairProvider, WindowProvider


@dataclass
class TrainResult:
    checkpoint: Path
    iterations_run: int
    final_loss: float
    aborted: bool = False
    abort_reason: Optional[str] = None


def sample_rng(seed: int, iteration: int) -> np.random.Generator:
    """Stateless per-iteration generator; resume needs only the counter."""
    return np.random.Generator(np.random.Philox(key=[seed, iteration]))


def hypotheses_from_config(cfg: RunConfig) -> DisparityHypotheses:
    h = cfg.hypotheses
    return DisparityHypotheses.linear(h.count, h.d_max, h.d_min)


def _opt_sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".opt")


def _meta_sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".meta.json")


def save_training_state(path: Path, model_name: str, model, adam: Adam,
                        iteration: int, seed: int):
    save_checkpoint(path, model_name, model.state_dict())
    opt_state = adam.state_dict()
    save_checkpoint(_opt_sidecar(path), model_name + ".opt", opt_state["arrays"])
    _meta_sidecar(path).write_text(json.dumps(
        {"iteration": iteration, "adam_step": adam.step_count, "seed": seed}) + "\n")


def load_training_state(path: Path, model, adam: Adam) -> int:
    """Restore model + optimizer + iteration counter; returns the iteration."""
    _, state = load_checkpoint(path)
    model.load_state_dict(state)
    _, arrays = load_checkpoint(_opt_sidecar(path))
    meta = json.loads(_meta_sidecar(path).read_text())
    adam.load_state_dict({"step": meta["adam_step"], "arrays": arrays})
    return int(meta["iteration"])


class _TrainLoop:
    """Shared run mechanics: logging, cadence checkpoints, abort handling."""

    def __init__(self, cfg: RunConfig, out_dir: Path, stage: str, model_name: str,
                 model, adam: Adam):
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.stage = stage
        self.model_name = model_name
        self.model = model
        self.adam = adam
        self.log_path = self.out_dir / f"train_{stage}.log"
        self.final_path = self.out_dir / f"{stage}_final.svck"
        self.last_good: Optional[Path] = None

    def _log(self, iteration: int, loss: float, wall_ms: float):
        with self.log_path.open("a") as fh:
            fh.write(f"{iteration},{loss:.6f},{wall_ms:.1f}\n")

    def _save(self, path: Path, iteration: int):
        save_training_state(path, self.model_name, self.model, self.adam,
                            iteration, self.cfg.seed)
        self.last_good = path

    def run(self, step_fn: Callable[[int], float], start_iteration: int = 0) -> TrainResult:
        cfg = self.cfg
        loss_value = float("nan")
        for it in range(start_iteration, cfg.iterations):
            t0 = time.perf_counter()
            try:
                loss_value = step_fn(it)
            except NonFiniteGradientError as exc:
                return self._abort(it, str(exc))
            if not np.isfinite(loss_value):
                return self._abort(it, f"non-finite loss {loss_value} at iteration {it}")
            wall_ms = (time.perf_counter() - t0) * 1e3
            done = it + 1
            if done % cfg.log_every == 0 or done == cfg.iterations:
                self._log(done, loss_value, wall_ms)
            if done % cfg.checkpoint_every == 0 and done < cfg.iterations:
                self._save(self.out_dir / f"{self.stage}_{done:06d}.svck", done)
        self._save(self.final_path, cfg.iterations)
        return TrainResult(checkpoint=self.final_path, iterations_run=cfg.iterations,
                           final_loss=loss_value, aborted=False)

    def _abort(self, iteration: int, reason: str) -> TrainResult:
        if self.last_good is None:
            # nothing trained yet; keep the initial state for inspection
            path = self.out_dir / f"{self.stage}_aborted_init.svck"
            save_training_state(path, self.model_name, self.model, self.adam,
                                iteration, self.cfg.seed)
            self.last_good = path
        return TrainResult(checkpoint=self.last_good, iterations_run=iteration,
                           final_loss=float("nan"), aborted=True, abort_reason=reason)


def depth_training_step(model: DepthNet, adam: Adam, frame, cfg: RunConfig) -> float:
    """One unsupervised step on a stereo pair; returns the total loss."""
    w = cfg.loss_weights
    x_l = Tensor(frame.left[None])
    x_r = Tensor(frame.right[None])
    xl3 = Tensor(frame.left)
    xr3 = Tensor(frame.right)
    model.zero_grad()
    d_l, d_r = model.predict_disparities(x_l, x_r)
    recon_l, valid_l = warp_stereo(xr3, d_l, "left")
    recon_r, valid_r = warp_stereo(xl3, d_r, "right")
    if cfg.border_mask:
        mask_l = losses.shrink_mask(valid_l.astype(np.float32))
        mask_r = losses.shrink_mask(valid_r.astype(np.float32))
        border = 1
    else:
        mask_l = mask_r = None
        border = None
    l_p = losses.photometric_loss(xl3, xr3, recon_l, recon_r, w,
                                  mask_l=mask_l, mask_r=mask_r)
    l_lr = losses.lr_consistency_loss(d_l, d_r, border=border)
    l_s = losses.smoothness_loss(d_l, xl3) + losses.smoothness_loss(d_r, xr3)
    total = losses.total_loss(l_p, l_lr, l_s, w)
    total.backward()
    adam.step()
    return float(total.data.reshape(-1)[0])


def train_depth(cfg: RunConfig, pairs: StereoPairProvider, out_dir,
                resume_from: Optional[Path] = None) -> TrainResult:
    """Unsupervised disparity training over a stream of stereo pairs."""
    model = DepthNet(hypotheses_from_config(cfg), seed=cfg.seed,
                     in_channels=cfg.feature_in_channels)
    adam = Adam(list(model.named_parameters()), lr=cfg.learning_rate,
                grad_clip=cfg.grad_clip)
    loop = _TrainLoop(cfg, Path(out_dir), "depth", DEPTH_MODEL_NAME, model, adam)
    start = 0
    if resume_from is not None:
        start = load_training_state(Path(resume_from), model, adam)

    def step(it: int) -> float:
        rng = sample_rng(cfg.seed, it)
        frame = pairs.get(int(rng.integers(len(pairs))))
        return depth_training_step(model, adam, frame, cfg)

    return loop.run(step, start_iteration=start)


class FrozenDepthPredictor:
    """Inference-only disparity source for the inpainting stage."""

    def __init__(self, checkpoint_path, cfg: RunConfig):
        self.model = DepthNet(hypotheses_from_config(cfg), seed=cfg.seed,
                              in_channels=cfg.feature_in_channels)
        _, state = load_checkpoint(checkpoint_path)
        self.model.load_state_dict(state)
        self.model.eval()
        self.checksum = checksum_state(self.model.state_dict())

    def disparity(self, frame) -> np.ndarray:
        with no_grad():
            d_l, _ = self.model.predict_disparities(Tensor(frame.left[None]),
                                                    Tensor(frame.right[None]))
        return d_l.data


def checksum_state(state: dict) -> str:
    import hashlib
    h = hashlib.sha256()
    for name in sorted(state):
        h.update(name.encode())
        h.update(np.ascontiguousarray(state[name]).tobytes())
    return h.hexdigest()


def reference_depths(sample: SequenceSample, cfg: RunConfig,
                     depth_net: Optional[FrozenDepthPredictor]) -> List[np.ndarray]:
    """Per-reference depth maps, from the frozen net or the ground truth."""
    if cfg.inpaint.depth_source == "ground_truth":
        if sample.ref_gt_depths is None:
            raise ValueError("sample carries no ground-truth depth")
        return sample.ref_gt_depths
    if depth_net is None:
        raise ValueError("depth_source 'checkpoint' needs a depth network")
    depths = []
    for ref in sample.refs:
        disp = depth_net.disparity(ref)
        z, _ = disparity_to_depth(disp, sample.cam)
        depths.append(z)
    return depths


def warp_sample(sample: SequenceSample, cfg: RunConfig,
                depth_net: Optional[FrozenDepthPredictor]):
    depths = reference_depths(sample, cfg, depth_net)
    return warp_reference_set([r.left.astype(np.float64) for r in sample.refs],
                              depths, sample.cam, sample.rel_poses)


def inpaint_training_step(model: InpaintNet, adam: Adam, sample: SequenceSample,
                          cfg: RunConfig,
                          depth_net: Optional[FrozenDepthPredictor]) -> float:
    warped = warp_sample(sample, cfg, depth_net)
    stacked = stack_warped_views(warped)
    model.zero_grad()
    pred = model(Tensor(stacked[None]))
    target = Tensor(sample.target.left[None])
    loss = losses.inpaint_loss(pred, target)
    loss.backward()
    adam.step()
    return float(loss.data.reshape(-1)[0])


def train_inpaint(cfg: RunConfig, windows: WindowProvider, out_dir,
                  resume_from: Optional[Path] = None) -> TrainResult:
    """L1 training of the inpainting network on frozen-depth forward warps."""
    icfg = cfg.inpaint
    depth_net = None
    if icfg.depth_source == "checkpoint":
        if not icfg.depth_checkpoint:
            raise ValueError("inpaint.depth_checkpoint is required when "
                             "depth_source is 'checkpoint'")
        depth_net = FrozenDepthPredictor(icfg.depth_checkpoint, cfg)
    model = InpaintNet(n_views=icfg.n_views, seed=cfg.seed, residual=icfg.residual,
                       use_bn=icfg.use_bn, output_activation=icfg.output_activation)
    adam = Adam(list(model.named_parameters()), lr=cfg.learning_rate,
                grad_clip=cfg.grad_clip)
    loop = _TrainLoop(cfg, Path(out_dir), "inpaint", model.model_name, model, adam)
    start = 0
    if resume_from is not None:
        start = load_training_state(Path(resume_from), model, adam)

    def step(it: int) -> float:
        rng = sample_rng(cfg.seed, it)
        sample = windows.get(int(rng.integers(len(windows))))
        return inpaint_training_step(model, adam, sample, cfg, depth_net)

    result = loop.run(step, start_iteration=start)
    if depth_net is not None and checksum_state(depth_net.model.state_dict()) != depth_net.checksum:
        raise AssertionError("frozen depth weights changed during inpaint training")
    return result
