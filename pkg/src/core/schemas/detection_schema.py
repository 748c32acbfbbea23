from __future__ import annotations

from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

DONT_CARE = "DontCare"


# -------------------------
# Difficulty
# -------------------------

class Difficulty(str, Enum):
    EASY = "easy"
    MODERATE = "moderate"
    HARD = "hard"
    IGNORED = "ignored"

    @property
    def rank(self) -> int:
        return _RANK[self]

    def admits(self, other: "Difficulty") -> bool:
        """True if a ground truth of level ``other`` counts when evaluating at this level."""
        return other is not Difficulty.IGNORED and other.rank <= self.rank


_RANK = {Difficulty.EASY: 0, Difficulty.MODERATE: 1, Difficulty.HARD: 2, Difficulty.IGNORED: 3}

EVAL_DIFFICULTIES: Tuple[Difficulty, ...] = (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD)


# -------------------------
# Detection record
# -------------------------

class DetectionRecord(BaseModel):
    """
    One labeled or predicted object in KITTI label-file convention.
    location is the bottom-center of the box in the camera frame.
    """

    model_config = ConfigDict(frozen=True)

    class_name: str = Field(..., description="Object class, kept verbatim (e.g. 'Car', 'DontCare')")
    truncation: float = Field(0.0, description="Fraction of the object outside the image")
    occlusion: int = Field(0, description="0 visible, 1 partly, 2 largely occluded, 3 unknown")
    alpha: float = Field(0.0, description="Observation angle in radians")
    bbox2d: Tuple[float, float, float, float] = Field(..., description="(left, top, right, bottom) in pixels")
    dimensions: Tuple[float, float, float] = Field(..., description="(h, w, l) in meters")
    location: Tuple[float, float, float] = Field(..., description="(x, y, z) bottom-center in meters")
    rotation_y: float = Field(0.0, description="Yaw about the camera y axis in radians")
    score: Optional[float] = Field(None, description="Detection confidence; absent on ground truth")

    @model_validator(mode="after")
    def _check_bbox(self) -> "DetectionRecord":
        left, top, right, bottom = self.bbox2d
        if not (right > left and bottom > top):
            raise ValueError(f"bbox2d must satisfy right > left and bottom > top, got {self.bbox2d}")
        return self

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONT_CARE

    @property
    def height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    @property
    def h(self) -> float:
        return self.dimensions[0]

    @property
    def w(self) -> float:
        return self.dimensions[1]

    @property
    def l(self) -> float:
        return self.dimensions[2]


# -------------------------
# Extent statistics file
# -------------------------

class ExtentStatsFile(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    class_name: str = Field("Car", alias="class")
    mean: List[float] = Field(..., min_length=3, max_length=3, description="[w, h, l] meters")
    std: List[float] = Field(..., min_length=3, max_length=3, description="[w, h, l] meters")
    count: Optional[int] = Field(None, description="Number of records the stats were computed from")
