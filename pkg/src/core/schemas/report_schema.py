from __future__ import annotations

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field


# -------------------------
# Average precision
# -------------------------

class ApEntry(BaseModel):
    metric: Literal["2d", "bev", "3d"]
    difficulty: Literal["easy", "moderate", "hard"]
    iou_threshold: float
    ap: Optional[float] = Field(None, description="None when the class/difficulty has no ground truth")
    n_gt: int = 0
    n_pred: int = 0
    recall: List[float] = Field(default_factory=list)
    precision: List[float] = Field(default_factory=list)


class EvaluationReport(BaseModel):
    """
    Full evaluation output. Embeds the run configuration for provenance.
    """

    run_config: Dict[str, Any] = Field(default_factory=dict)
    class_name: str = "Car"
    ap_points: int = 11
    frames: int = 0
    missing_frames: List[str] = Field(default_factory=list)
    entries: List[ApEntry] = Field(default_factory=list)

    def lookup(self, metric: str, difficulty: str, iou_threshold: float) -> Optional[ApEntry]:
        for e in self.entries:
            if e.metric == metric and e.difficulty == difficulty and abs(e.iou_threshold - iou_threshold) < 1e-9:
                return e
        return None


# -------------------------
# Binned recall
# -------------------------

class BinnedRecallRow(BaseModel):
    bin_spec: Literal["depth", "azimuth"]
    lower: float
    upper: float
    count: int
    matched: int
    recall: Optional[float] = None
