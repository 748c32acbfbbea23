from __future__ import annotations

import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.core.errors import ConfigError
from src.core.schemas.detection_schema import DetectionRecord
from src.core.schemas.report_schema import EvaluationReport


class RunConfig(BaseModel):
    """
    Options shared by every subcommand. Defaults live here; CLI flags and
    ROI10D_<FIELD> environment variables override them.
    Embedded verbatim in every report for provenance.
    """

    subcommand: str = "evaluate"
    data_root: Optional[Path] = None
    pred_dir: Optional[Path] = None
    split: Optional[Path] = None
    class_name: str = "Car"

    nms2d: float = 0.65
    nms_bev: float = 0.05
    iou: float = 0.7
    ap_points: int = 11

    depth_bin_m: float = 5.0
    azimuth_bin_deg: float = 20.0

    seed: int = 0
    out: Path = Path("out")
    workers: int = 1

    # subcommand-specific parameters (k_max, iterations, mesh bank, ...)
    options: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("nms2d", "nms_bev", "iou")
    @classmethod
    def _unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {v}")
        return v

    @field_validator("depth_bin_m", "azimuth_bin_deg")
    @classmethod
    def _positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError(f"bin width must be positive, got {v}")
        return v

    @field_validator("ap_points")
    @classmethod
    def _ap_points(cls, v: int) -> int:
        if v not in (11, 40):
            raise ValueError(f"ap_points must be 11 or 40, got {v}")
        return v

    @field_validator("workers")
    @classmethod
    def _workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError("workers must be >= 1")
        return v

    @property
    def iou_thresholds(self) -> List[float]:
        """The requested IoU plus 0.5, strictest first."""
        return sorted({self.iou, 0.5}, reverse=True)

    def validate_paths(self, *, need_predictions: bool = False) -> "RunConfig":
        if self.data_root is None:
            raise ConfigError("--data-root is required")
        if not (self.data_root / "label_2").is_dir():
            raise ConfigError(f"no label_2 directory under {self.data_root}")
        if self.split is not None and not self.split.is_file():
            raise ConfigError(f"split file not found: {self.split}")
        if need_predictions and (self.pred_dir is None or not self.pred_dir.is_dir()):
            raise ConfigError(f"prediction directory not found: {self.pred_dir}")
        return self


class EvaluationState(BaseModel):
    """
    Per-run state for the evaluation graph.
    Frames are keyed by frame id; lists follow frame_ids order.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    config: RunConfig = Field(default_factory=RunConfig)

    frame_ids: List[str] = Field(default_factory=list)
    ground_truth: Dict[str, List[DetectionRecord]] = Field(default_factory=dict)
    predictions: Dict[str, List[DetectionRecord]] = Field(default_factory=dict)
    missing_frames: List[str] = Field(default_factory=list)

    # after 2D then BEV suppression
    filtered: Dict[str, List[DetectionRecord]] = Field(default_factory=dict)

    report: Optional[EvaluationReport] = None

    # Bookkeeping
    frames_loaded: bool = False
    started_epoch: float = Field(default_factory=lambda: time.time())
