"""Run configuration: JSON schema with the published hyperparameters baked in.

A config file is a JSON object; every field is optional and falls back to
the defaults below.  See README.md for the documented schema.  Command-line
flags override file values.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass
class HypothesesConfig:
    count: int = 16
    d_max: float = 16.0
    d_min: float = 0.0


@dataclass
class SyntheticDataConfig:
    scenes: int = 20
    seed: int = 1234
    height: int = 64
    width: int = 64
    n_frames: int = 5
    spacing_m: float = 0.25
    min_planes: int = 1
    max_planes: int = 4


@dataclass
class DatasetConfig:
    kind: str = "synthetic"              # "synthetic" | "kitti"
    root: Optional[str] = None           # kitti only
    sequences: Tuple[str, ...] = ()      # kitti only; empty = all found
    crop: Optional[Tuple[int, int]] = None  # center-crop (H, W) for kitti frames
    synthetic: SyntheticDataConfig = field(default_factory=SyntheticDataConfig)


@dataclass
class InpaintConfig:
    n_views: int = 4
    residual: bool = True
    use_bn: bool = False
    output_activation: str = "clamp"
    depth_source: str = "checkpoint"     # "checkpoint" | "ground_truth"
    depth_checkpoint: Optional[str] = None
    spacing: int = 1


@dataclass
class RunConfig:
    stage: str = "depth"                 # "depth" | "inpaint"
    iterations: int = 200_000            # inpaint stage default is 1_000_000
    batch_size: int = 1
    seed: int = 0
    learning_rate: float = 4e-4
    checkpoint_every: int = 1000
    log_every: int = 50
    grad_clip: Optional[float] = None
    border_mask: bool = True
    feature_in_channels: int = 3
    loss_weights: LossWeights = field(default_factory=LossWeights)
    hypotheses: HypothesesConfig = field(default_factory=HypothesesConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)

    def __post_init__(self):
        if self.stage not in ("depth", "inpaint"):
            raise ConfigError(f"stage must be 'depth' or 'inpaint', got {self.stage!r}")
        if self.iterations <= 0:
            raise ConfigError("iterations must be positive")
        if self.batch_size != 1:
            raise ConfigError("only batch size 1 is supported")


PAPER_INPAINT_ITERATIONS = 1_000_000


def _build(cls, payload: dict):
    if not isinstance(payload, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(payload).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    nested = {"loss_weights": LossWeights, "hypotheses": HypothesesConfig,
              "dataset": DatasetConfig, "inpaint": InpaintConfig,
              "synthetic": SyntheticDataConfig}
    for name, value in payload.items():
        if name in nested and isinstance(value, dict):
            kwargs[name] = _build(nested[name], value)
        elif name in ("sequences", "ssim_windows") and isinstance(value, list):
            kwargs[name] = tuple(value)
        elif name == "crop" and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return _build(RunConfig, payload)


def config_from_dict(payload: dict) -> RunConfig:
    return _build(RunConfig, payload)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(asdict(cfg), indent=2) + "\n")
