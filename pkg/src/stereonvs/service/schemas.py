"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class GenerateDataRequest(BaseModel):
    out_dir: str
    scenes: int = 20
    seed: int = 1234
    height: int = 64
    width: int = 64
    frames: int = 5
    spacing_m: float = 0.25
    with_depth: bool = True


class GenerateDataResponse(BaseModel):
    out_dir: str
    sequences: List[str]


class WindowRef(BaseModel):
    """Addresses one five-frame window inside a dataset."""
    data_root: str
    sequence: str
    center: int
    spacing: int = Field(default=1, ge=0, description="0 selects the debug self-window")


class RenderRequest(BaseModel):
    window: WindowRef
    depth_checkpoint: Optional[str] = None
    inpaint_checkpoint: Optional[str] = None
    use_gt_depth: bool = False
    use_median: bool = False
    config: Optional[dict] = None


class RenderResponse(BaseModel):
    mae_255: float
    timings_s: Dict[str, float]
    total_time_s: float
    hole_fraction: float
    rendering_png_base64: str
    warped_png_base64: List[str] = []


class EvaluateRequest(BaseModel):
    data_root: str
    sequences: Optional[List[str]] = None
    spacings: List[int] = [1, 2, 3]
    label: str = "ours"
    depth_checkpoint: Optional[str] = None
    inpaint_checkpoint: Optional[str] = None
    use_gt_depth: bool = False
    include_median: bool = False
    config: Optional[dict] = None


class EvaluateRow(BaseModel):
    label: str
    errors_by_spacing: Dict[int, float]


class EvaluateResponse(BaseModel):
    test_spacings: List[int]
    rows: List[EvaluateRow]


class TrainRequest(BaseModel):
    stage: str = Field(pattern="^(depth|inpaint)$")
    out_dir: str
    iterations: int = Field(gt=0)
    seed: int = 0
    data_root: Optional[str] = None
    sequences: Optional[List[str]] = None
    depth_checkpoint: Optional[str] = None
    use_gt_depth: bool = False
    spacing: int = 1
    config: Optional[dict] = None


class TrainResponse(BaseModel):
    checkpoint: str
    iterations_run: int
    final_loss: float
    aborted: bool
    abort_reason: Optional[str] = None


class GradcheckRequest(BaseModel):
    suites: Optional[List[str]] = None
    pipeline_samples: int = 50
    seed: int = 0


class GradcheckEntry(BaseModel):
    name: str
    error: float
    tolerance: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    results: List[GradcheckEntry]
