"""Command-line surface for the view-synthesis pipeline.

Exit codes: 0 success, 1 usage error, 2 missing artifact, 3 shape/config
error, 4 empty evaluation, 5 gradient-check failure.  Progress goes to
stderr; machine-readable results go to files.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2
EXIT_INVALID = 3
EXIT_EMPTY_EVAL = 4
EXIT_GRADCHECK_FAILED = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _info(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _load_config(args) -> "RunConfig":
    from .config import RunConfig, load_config
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for field in ("iterations", "seed"):
        value = getattr(args, field, None)
        if value is not None:
            setattr(cfg, field, value)
    return cfg


def _apply_threads(args):
    threads = getattr(args, "threads", None)
    if threads:
        try:
            from threadpoolctl import threadpool_limits
            threadpool_limits(limits=threads)
        except ImportError:
            _info("threadpoolctl not installed; --threads ignored")


def _sequences_from(args, cfg, need_gt: bool):
    """Sequences for training/evaluation: a KITTI-layout root or synthetic."""
    from .data.kitti import KittiSequence, discover_sequences
    from .data.synthetic import SceneConfig, generate_scenes
    if getattr(args, "data", None):
        root = Path(args.data)
        ids = args.seqs.split(",") if getattr(args, "seqs", None) else discover_sequences(root)
        crop = tuple(cfg.dataset.crop) if cfg.dataset.crop else None
        return [KittiSequence(root, sid, crop=crop) for sid in ids]
    s = cfg.dataset.synthetic
    scfg = SceneConfig(height=s.height, width=s.width, n_frames=s.n_frames,
                       spacing_m=s.spacing_m, min_planes=s.min_planes,
                       max_planes=s.max_planes)
    return generate_scenes(s.seed, s.scenes, scfg)


def cmd_gen_data(args) -> int:
    from .data.kitti import export_kitti_layout
    from .data.synthetic import SceneConfig, generate_scenes
    h, w = (int(v) for v in args.size.split("x"))
    scfg = SceneConfig(height=h, width=w, n_frames=args.frames,
                       spacing_m=args.spacing_m, min_planes=args.min_planes,
                       max_planes=args.max_planes)
    scenes = generate_scenes(args.seed, args.scenes, scfg)
    ids = export_kitti_layout(scenes, args.out, with_depth=not args.no_depth)
    summary = {"sequences": ids, "seed": args.seed, "height": h, "width": w,
               "frames": args.frames, "spacing_m": args.spacing_m}
    Path(args.out, "dataset.json").write_text(json.dumps(summary, indent=2) + "\n")
    _info(f"wrote {len(ids)} sequences under {args.out}")
    return EXIT_OK


def cmd_train_depth(args) -> int:
    from .data.sequences import StereoPairProvider
    from .trainer import train_depth
    cfg = _load_config(args)
    cfg.stage = "depth"
    sequences = _sequences_from(args, cfg, need_gt=False)
    pairs = StereoPairProvider(sequences)
    _info(f"training disparity network: {cfg.iterations} iterations, "
          f"{len(pairs)} stereo pairs, seed {cfg.seed}")
    result = train_depth(cfg, pairs, args.out,
                         resume_from=Path(args.resume) if args.resume else None)
    if result.aborted:
        _info(f"aborted: {result.abort_reason}; last checkpoint {result.checkpoint}")
        return EXIT_INVALID
    _info(f"done; final loss {result.final_loss:.6f}; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_train_inpaint(args) -> int:
    from .config import PAPER_INPAINT_ITERATIONS
    from .data.sequences import WindowProvider
    from .trainer import train_inpaint
    cfg = _load_config(args)
    cfg.stage = "inpaint"
    if args.config is None and args.iterations is None:
        cfg.iterations = PAPER_INPAINT_ITERATIONS
    if args.gt_depth:
        cfg.inpaint.depth_source = "ground_truth"
    elif args.depth_ckpt:
        cfg.inpaint.depth_source = "checkpoint"
        cfg.inpaint.depth_checkpoint = args.depth_ckpt
    if args.spacing is not None:
        cfg.inpaint.spacing = args.spacing
    sequences = _sequences_from(args, cfg, need_gt=args.gt_depth)
    windows = WindowProvider(sequences, spacing=cfg.inpaint.spacing,
                             with_gt_depth=(cfg.inpaint.depth_source == "ground_truth"))
    if len(windows) == 0:
        _info("no eligible training windows")
        return EXIT_EMPTY_EVAL
    _info(f"training inpainting network: {cfg.iterations} iterations, "
          f"{len(windows)} windows, depth from {cfg.inpaint.depth_source}")
    result = train_inpaint(cfg, windows, args.out,
                           resume_from=Path(args.resume) if args.resume else None)
    if result.aborted:
        _info(f"aborted: {result.abort_reason}; last checkpoint {result.checkpoint}")
        return EXIT_INVALID
    _info(f"done; final loss {result.final_loss:.6f}; checkpoint {result.checkpoint}")
    return EXIT_OK


def _resolve_window(args, cfg, sequences):
    from .data.sequences import sample_window, self_window
    seq_by_id = {getattr(s, "seq_id", str(i)): s for i, s in enumerate(sequences)}
    if args.seq not in seq_by_id:
        raise FileNotFoundError(f"sequence '{args.seq}' not found "
                                f"(available: {sorted(seq_by_id)})")
    seq = seq_by_id[args.seq]
    need_gt = args.gt_depth
    if args.self_window:
        return self_window(seq, args.center, n_views=cfg.inpaint.n_views)
    return sample_window(seq, args.center, args.spacing, with_gt_depth=need_gt)


def cmd_render(args) -> int:
    from .render import load_inpaint_net, render_window, save_render_artifacts
    from .trainer import FrozenDepthPredictor
    cfg = _load_config(args)
    sequences = _sequences_from(args, cfg, need_gt=args.gt_depth)
    sample = _resolve_window(args, cfg, sequences)
    depth_net = None
    if not args.gt_depth:
        if not args.depth_ckpt:
            raise FileNotFoundError("render needs --depth-ckpt (or --gt-depth)")
        depth_net = FrozenDepthPredictor(args.depth_ckpt, cfg)
    inpaint_net = None
    if not args.median:
        if not args.inpaint_ckpt:
            raise FileNotFoundError("render needs --inpaint-ckpt (or --median)")
        inpaint_net = load_inpaint_net(args.inpaint_ckpt, cfg)
    result = render_window(sample, cfg, depth_net, inpaint_net,
                           use_gt_depth=args.gt_depth, use_median=args.median)
    out = Path(args.out)
    save_render_artifacts(result, out)
    report = {"mae_255": result.mae_255,
              "timings_s": result.timings_s,
              "total_time_s": result.total_time_s,
              "clamped_disparities": result.clamped_disparities,
              "spacing": sample.spacing,
              "hole_fraction": float(np.mean([1.0 - v.mask.mean() for v in result.warped]))}
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    _info(f"render: mae={result.mae_255:.2f} "
          + " ".join(f"{k}={v:.2f}s" for k, v in result.timings_s.items()))
    return EXIT_OK


def cmd_baseline_median(args) -> int:
    args.median = True
    args.inpaint_ckpt = None
    return cmd_render(args)


def cmd_evaluate(args) -> int:
    from .data.evaluation import evaluate
    from .data.sequences import WindowProvider
    from .render import load_inpaint_net, render_window
    from .trainer import FrozenDepthPredictor
    cfg = _load_config(args)
    sequences = _sequences_from(args, cfg, need_gt=args.gt_depth)
    spacings = [int(s) for s in args.spacings.split(",")]
    models = []
    if args.models_file:
        for entry in json.loads(Path(args.models_file).read_text()):
            models.append((entry["label"], entry.get("depth"), entry.get("inpaint")))
    elif args.depth_ckpt or args.gt_depth:
        models.append((args.label, args.depth_ckpt, args.inpaint_ckpt))
    if not models and not args.include_median:
        raise FileNotFoundError("evaluate needs checkpoints (or --include-median)")

    providers = {}
    empty = []
    for sp in spacings:
        provider = WindowProvider(sequences, spacing=sp, with_gt_depth=args.gt_depth)
        if len(provider) == 0:
            empty.append(sp)
        providers[sp] = provider
    if empty:
        _info(f"no eligible windows at spacing(s) {empty}")
        return EXIT_EMPTY_EVAL

    rows = []

    def run_row(label, depth_ckpt, inpaint_ckpt, median):
        depth_net = None
        if depth_ckpt:
            depth_net = FrozenDepthPredictor(depth_ckpt, cfg)
        elif not args.gt_depth:
            raise FileNotFoundError(f"row '{label}': no depth checkpoint and no --gt-depth")
        inpaint_net = None if median else load_inpaint_net(inpaint_ckpt, cfg)
        cells = {}
        for sp in spacings:
            provider = providers[sp]
            renders, targets, masks = [], [], []
            for i in range(len(provider)):
                sample = provider.get(i)
                r = render_window(sample, cfg, depth_net, inpaint_net,
                                  use_gt_depth=args.gt_depth, use_median=median)
                renders.append(r.rendering)
                targets.append(sample.target.left)
                masks.append(1.0 - np.minimum(
                    np.sum([wv.mask for wv in r.warped], axis=0), 1.0))
            report = evaluate(renders, targets, hole_masks=masks)
            cells[sp] = report.mean_abs_error
            _info(f"  {label} spacing {sp}: mae {report.mean_abs_error:.2f} "
                  f"({len(renders)} windows, holes {report.hole_fraction:.3f})")
        rows.append({"label": label, **{f"test_spacing_{sp}": cells[sp] for sp in spacings}})

    for label, depth_ckpt, inpaint_ckpt in models:
        run_row(label, depth_ckpt, inpaint_ckpt, median=False)
    if args.include_median:
        depth_for_median = models[0][1] if models else args.depth_ckpt
        run_row("median-of-warped-views", depth_for_median, None, median=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.json").write_text(json.dumps(
        {"test_spacings": spacings, "rows": rows}, indent=2) + "\n")
    with (out / "evaluation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method"] + [f"test_spacing_{sp}" for sp in spacings])
        for row in rows:
            writer.writerow([row["label"]] + [f"{row[f'test_spacing_{sp}']:.4f}"
                                              for sp in spacings])
    _info(f"wrote {out / 'evaluation.json'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suites
    from .gradcheck_suites import tiny_pipeline_check
    names = args.suites.split(",") if args.suites else None
    t0 = time.perf_counter()
    results = run_suites(names)
    lines = [r.as_line() for r in results]
    ok = all(r.passed for r in results)
    if names is None or "tiny_pipeline" in (names or []):
        err = tiny_pipeline_check(n_samples=args.pipeline_samples, seed=args.seed or 0)
        passed = err < 1e-3
        ok = ok and passed
        lines.append(f"gradcheck,tiny_pipeline,{err:.3e},1.0e-03,"
                     f"{'pass' if passed else 'FAIL'}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    for line in lines:
        _info(line)
    _info(f"gradcheck {'passed' if ok else 'FAILED'} in {time.perf_counter() - t0:.1f}s; "
          f"table at {out}")
    return EXIT_OK if ok else EXIT_GRADCHECK_FAILED


def build_parser() -> _Parser:
    parser = _Parser(prog="stereonvs",
                     description="Stereo-based novel view synthesis pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a synthetic dataset in KITTI layout")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--size", default="64x64", help="HxW")
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--spacing-m", type=float, default=0.25)
    p.add_argument("--min-planes", type=int, default=1)
    p.add_argument("--max-planes", type=int, default=4)
    p.add_argument("--no-depth", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    def add_common(p, with_data=True):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if with_data:
            p.add_argument("--data", default=None, help="KITTI-layout dataset root")
            p.add_argument("--seqs", default=None, help="comma-separated sequence ids")

    p = sub.add_parser("train-depth", help="unsupervised disparity training")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.set_defaults(func=cmd_train_depth)

    p = sub.add_parser("train-inpaint", help="inpainting training on frozen warps")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--depth-ckpt", default=None)
    p.add_argument("--gt-depth", action="store_true")
    p.add_argument("--spacing", type=int, default=None)
    p.set_defaults(func=cmd_train_inpaint)

    def add_window_args(p):
        p.add_argument("--seq", required=True)
        p.add_argument("--center", type=int, required=True)
        p.add_argument("--spacing", type=int, default=1)
        p.add_argument("--self-window", action="store_true",
                       help="debug: use the target as its own references")
        p.add_argument("--gt-depth", action="store_true")

    p = sub.add_parser("render", help="render one novel view")
    add_common(p)
    add_window_args(p)
    p.add_argument("--depth-ckpt", default=None)
    p.add_argument("--inpaint-ckpt", default=None)
    p.add_argument("--median", action="store_true", help="median fusion instead of the network")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("baseline-median", help="render with the median-of-warped-views baseline")
    add_common(p)
    add_window_args(p)
    p.add_argument("--depth-ckpt", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline_median)

    p = sub.add_parser("evaluate", help="table of mean absolute brightness errors")
    add_common(p)
    p.add_argument("--spacings", default="1,2,3")
    p.add_argument("--depth-ckpt", default=None)
    p.add_argument("--inpaint-ckpt", default=None)
    p.add_argument("--label", default="ours")
    p.add_argument("--models-file", default=None,
                   help="JSON list of {label, depth, inpaint} rows")
    p.add_argument("--include-median", action="store_true")
    p.add_argument("--gt-depth", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference verification of every op")
    p.add_argument("--suites", default=None, help="comma-separated suite names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pipeline-samples", type=int, default=50)
    p.add_argument("--out", default="gradcheck_report.csv")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    from .checkpoint import CheckpointError
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _info(f"error: {exc}")
        return EXIT_MISSING
    except (ValueError, KeyError, CheckpointError) as exc:
        _info(f"error: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
