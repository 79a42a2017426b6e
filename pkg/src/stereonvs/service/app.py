"""FastAPI service wrapping the view-synthesis pipeline.

Checkpoints load per request with a small mtime-keyed cache, so a running
service picks up retrained models without restarts.  Errors map to 404 for
missing artifacts and 400 for shape/config problems, mirroring the CLI's
exit codes 2 and 3.
"""
from __future__ import annotations

import base64
import io
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..checkpoint import CheckpointError
from ..config import RunConfig, config_from_dict
from ..data.evaluation import evaluate
from ..data.kitti import KittiSequence, discover_sequences, export_kitti_layout
from ..data.sequences import WindowProvider, sample_window, self_window
from ..data.synthetic import SceneConfig, generate_scenes
from ..render import load_inpaint_net, render_window
from ..trainer import FrozenDepthPredictor
from . import schemas


def _cfg(payload: Optional[dict]) -> RunConfig:
    return config_from_dict(payload) if payload else RunConfig()


def _png_base64(rgb: np.ndarray) -> str:
    from PIL import Image
    arr = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class _ModelCache:
    """Path+mtime keyed cache of loaded networks."""

    def __init__(self):
        self._store: Dict[Tuple[str, float, str], object] = {}

    def get(self, path: str, kind: str, loader):
        key = (str(path), Path(path).stat().st_mtime, kind)
        if key not in self._store:
            self._store.clear()  # keep at most a handful of live models
            self._store[key] = loader()
        return self._store[key]


def create_app() -> FastAPI:
    app = FastAPI(title="stereonvs", version=__version__,
                  description="Stereo-based novel view synthesis")
    cache = _ModelCache()

    def load_depth(path: Optional[str], cfg: RunConfig) -> Optional[FrozenDepthPredictor]:
        if path is None:
            return None
        return cache.get(path, "depth", lambda: FrozenDepthPredictor(path, cfg))

    def load_inpaint(path: Optional[str], cfg: RunConfig):
        if path is None:
            return None
        return cache.get(path, "inpaint", lambda: load_inpaint_net(path, cfg))

    def open_sequence(root: str, seq_id: str, cfg: RunConfig) -> KittiSequence:
        crop = tuple(cfg.dataset.crop) if cfg.dataset.crop else None
        return KittiSequence(root, seq_id, crop=crop)

    def resolve_window(ref: schemas.WindowRef, cfg: RunConfig, need_gt: bool):
        seq = open_sequence(ref.data_root, ref.sequence, cfg)
        if ref.spacing == 0:
            return self_window(seq, ref.center, n_views=cfg.inpaint.n_views)
        return sample_window(seq, ref.center, ref.spacing, with_gt_depth=need_gt)

    @app.exception_handler(FileNotFoundError)
    async def _missing(request, exc):
        raise HTTPException(status_code=404, detail=str(exc))

    @app.exception_handler(ValueError)
    async def _invalid(request, exc):
        raise HTTPException(status_code=400, detail=str(exc))

    @app.exception_handler(CheckpointError)
    async def _badckpt(request, exc):
        raise HTTPException(status_code=400, detail=str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(version=__version__)

    @app.post("/datasets/generate", response_model=schemas.GenerateDataResponse)
    def generate(req: schemas.GenerateDataRequest):
        scfg = SceneConfig(height=req.height, width=req.width, n_frames=req.frames,
                           spacing_m=req.spacing_m)
        scenes = generate_scenes(req.seed, req.scenes, scfg)
        ids = export_kitti_layout(scenes, req.out_dir, with_depth=req.with_depth)
        return schemas.GenerateDataResponse(out_dir=req.out_dir, sequences=ids)

    @app.post("/render", response_model=schemas.RenderResponse)
    def render(req: schemas.RenderRequest):
        cfg = _cfg(req.config)
        sample = resolve_window(req.window, cfg, req.use_gt_depth)
        depth_net = load_depth(req.depth_checkpoint, cfg) if not req.use_gt_depth else None
        inpaint_net = load_inpaint(req.inpaint_checkpoint, cfg) if not req.use_median else None
        result = render_window(sample, cfg, depth_net, inpaint_net,
                               use_gt_depth=req.use_gt_depth, use_median=req.use_median)
        return schemas.RenderResponse(
            mae_255=result.mae_255,
            timings_s=result.timings_s,
            total_time_s=result.total_time_s,
            hole_fraction=float(np.mean([1.0 - v.mask.mean() for v in result.warped])),
            rendering_png_base64=_png_base64(result.rendering),
            warped_png_base64=[_png_base64(v.rgb) for v in result.warped])

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate_endpoint(req: schemas.EvaluateRequest):
        cfg = _cfg(req.config)
        seq_ids = req.sequences or discover_sequences(req.data_root)
        sequences = [open_sequence(req.data_root, sid, cfg) for sid in seq_ids]
        rows: List[schemas.EvaluateRow] = []

        def run_row(label: str, depth_ckpt, inpaint_ckpt, median: bool):
            depth_net = load_depth(depth_ckpt, cfg)
            if depth_net is None and not req.use_gt_depth:
                raise ValueError(f"row '{label}': no depth checkpoint and use_gt_depth false")
            inpaint_net = None if median else load_inpaint(inpaint_ckpt, cfg)
            if inpaint_net is None and not median:
                raise ValueError(f"row '{label}': no inpainting checkpoint")
            cells = {}
            for sp in req.spacings:
                provider = WindowProvider(sequences, spacing=sp,
                                          with_gt_depth=req.use_gt_depth)
                if len(provider) == 0:
                    raise ValueError(f"no eligible windows at spacing {sp}")
                renders, targets = [], []
                for i in range(len(provider)):
                    s = provider.get(i)
                    r = render_window(s, cfg, depth_net, inpaint_net,
                                      use_gt_depth=req.use_gt_depth, use_median=median)
                    renders.append(r.rendering)
                    targets.append(s.target.left)
                cells[sp] = evaluate(renders, targets).mean_abs_error
            rows.append(schemas.EvaluateRow(label=label, errors_by_spacing=cells))

        if req.depth_checkpoint or req.use_gt_depth:
            if req.inpaint_checkpoint:
                run_row(req.label, req.depth_checkpoint, req.inpaint_checkpoint, False)
        if req.include_median:
            run_row("median-of-warped-views", req.depth_checkpoint, None, True)
        if not rows:
            raise ValueError("nothing to evaluate: give checkpoints or include_median")
        return schemas.EvaluateResponse(test_spacings=req.spacings, rows=rows)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        from ..data.sequences import StereoPairProvider
        from ..trainer import train_depth, train_inpaint
        cfg = _cfg(req.config)
        cfg.stage = req.stage
        cfg.iterations = req.iterations
        cfg.seed = req.seed
        if req.data_root is None:
            from ..data.synthetic import generate_scenes as gen
            s = cfg.dataset.synthetic
            sequences = gen(s.seed, s.scenes,
                            SceneConfig(height=s.height, width=s.width,
                                        n_frames=s.n_frames, spacing_m=s.spacing_m))
        else:
            seq_ids = req.sequences or discover_sequences(req.data_root)
            sequences = [open_sequence(req.data_root, sid, cfg) for sid in seq_ids]
        if req.stage == "depth":
            result = train_depth(cfg, StereoPairProvider(sequences), req.out_dir)
        else:
            if req.use_gt_depth:
                cfg.inpaint.depth_source = "ground_truth"
            elif req.depth_checkpoint:
                cfg.inpaint.depth_source = "checkpoint"
                cfg.inpaint.depth_checkpoint = req.depth_checkpoint
            cfg.inpaint.spacing = req.spacing
            windows = WindowProvider(sequences, spacing=req.spacing,
                                     with_gt_depth=req.use_gt_depth)
            if len(windows) == 0:
                raise ValueError("no eligible training windows")
            result = train_inpaint(cfg, windows, req.out_dir)
        return schemas.TrainResponse(checkpoint=str(result.checkpoint),
                                     iterations_run=result.iterations_run,
                                     final_loss=result.final_loss,
                                     aborted=result.aborted,
                                     abort_reason=result.abort_reason)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest):
        from ..gradcheck import run_suites
        from ..gradcheck_suites import tiny_pipeline_check
        results = run_suites(req.suites)
        entries = [schemas.GradcheckEntry(name=r.name, error=r.error,
                                          tolerance=r.tolerance, passed=r.passed)
                   for r in results]
        if req.suites is None:
            err = tiny_pipeline_check(n_samples=req.pipeline_samples, seed=req.seed)
            entries.append(schemas.GradcheckEntry(name="tiny_pipeline", error=err,
                                                  tolerance=1e-3, passed=err < 1e-3))
        return schemas.GradcheckResponse(passed=all(e.passed for e in entries),
                                         results=entries)

    return app


app = create_app()
