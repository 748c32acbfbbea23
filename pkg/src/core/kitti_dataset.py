"""
kitti_dataset.py
KITTI 3D object label, calibration and split I/O.

Label line layout (15 fields, a 16th score on predictions):
    type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]
Floats are written with two decimals; DontCare sentinels keep their integer form.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import orjson
from pydantic import ValidationError

from src.core.camera_geometry import (
    Box3D,
    CameraIntrinsics,
    ExtentStats,
    Quaternion,
    alpha_from_rotation_y,
    instantiate_box,
    project_box,
    wrap_angle,
)
from src.core.errors import GeometryDomainError, LabelParseError
from src.core.schemas.detection_schema import (
    DetectionRecord,
    Difficulty,
    ExtentStatsFile,
)

logger = logging.getLogger(__name__)

GT_FIELDS = 15
PRED_FIELDS = 16
ALPHA_TOLERANCE = 1e-2

# (min bbox height px, max occlusion, max truncation)
DIFFICULTY_GATES: Tuple[Tuple[Difficulty, float, int, float], ...] = (
    (Difficulty.EASY, 40.0, 0, 0.15),
    (Difficulty.MODERATE, 25.0, 1, 0.30),
    (Difficulty.HARD, 25.0, 2, 0.50),
)


# =========================================================
# Label lines
# =========================================================

def parse_label_line(line: str, line_number: Optional[int] = None) -> DetectionRecord:
    tokens = line.split()
    if len(tokens) not in (GT_FIELDS, PRED_FIELDS):
        raise LabelParseError(
            f"expected {GT_FIELDS} or {PRED_FIELDS} fields, got {len(tokens)}", line_number=line_number
        )
    try:
        values = [float(t) for t in tokens[1:]]
    except ValueError as e:
        raise LabelParseError(f"non-numeric field ({e})", line_number=line_number) from e
    try:
        occlusion = int(values[1])
    except (ValueError, OverflowError) as e:
        raise LabelParseError(f"occlusion must be an integer, got {tokens[2]}", line_number=line_number) from e
    if values[1] != occlusion:
        raise LabelParseError(f"occlusion must be an integer, got {tokens[2]}", line_number=line_number)

    try:
        return DetectionRecord(
            class_name=tokens[0],
            truncation=values[0],
            occlusion=occlusion,
            alpha=values[2],
            bbox2d=tuple(values[3:7]),
            dimensions=tuple(values[7:10]),
            location=tuple(values[10:13]),
            rotation_y=values[13],
            score=values[14] if len(values) == PRED_FIELDS - 1 else None,
        )
    except ValidationError as e:
        raise LabelParseError(str(e.errors()[0]["msg"]), line_number=line_number) from e


def parse_label_file(text: str) -> List[DetectionRecord]:
    records: List[DetectionRecord] = []
    for idx, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        records.append(parse_label_line(line, line_number=idx))
    return records


def _fmt(value: float, as_int: bool = False) -> str:
    if as_int and float(value) == int(value):
        return str(int(value))
    return f"{float(value):.2f}"


def format_record(rec: DetectionRecord) -> str:
    sentinel = rec.is_dontcare
    fields = [
        rec.class_name,
        _fmt(rec.truncation, sentinel),
        str(int(rec.occlusion)),
        _fmt(rec.alpha, sentinel),
        *(_fmt(v) for v in rec.bbox2d),
        *(_fmt(v, sentinel) for v in rec.dimensions),
        *(_fmt(v, sentinel) for v in rec.location),
        _fmt(rec.rotation_y, sentinel),
    ]
    if rec.score is not None:
        fields.append(_fmt(rec.score))
    return " ".join(fields)


def serialize_label_file(records: Iterable[DetectionRecord]) -> str:
    return "".join(format_record(r) + "\n" for r in records)


# =========================================================
# Difficulty, boxes, angles
# =========================================================

def classify_difficulty(rec: DetectionRecord) -> Difficulty:
    if rec.is_dontcare:
        return Difficulty.IGNORED
    for level, min_height, max_occ, max_trunc in DIFFICULTY_GATES:
        if rec.height >= min_height and rec.occlusion <= max_occ and rec.truncation <= max_trunc:
            return level
    return Difficulty.IGNORED


def record_to_box3d(rec: DetectionRecord) -> Box3D:
    h, w, l = rec.dimensions
    if min(h, w, l) <= 0:
        raise GeometryDomainError(f"Non-positive dimensions {rec.dimensions}")
    centroid = np.asarray(rec.location, dtype=float) + np.array([0.0, -h / 2.0, 0.0])
    return instantiate_box(Quaternion.about_y(rec.rotation_y), centroid, w, h, l)


def clip_rect(rect, width: int, height: int):
    left, top, right, bottom = rect
    return (
        min(max(left, 0.0), width - 1.0),
        min(max(top, 0.0), height - 1.0),
        min(max(right, 0.0), width - 1.0),
        min(max(bottom, 0.0), height - 1.0),
    )


def box3d_to_record(
    box: Box3D,
    K: CameraIntrinsics,
    *,
    class_name: str = "Car",
    score: Optional[float] = None,
    image_size: Optional[Tuple[int, int]] = None,
    occlusion: int = 0,
) -> DetectionRecord:
    """Label-format record for a box; yaw is read from the length axis heading.

    With ``image_size`` = (width, height) the 2D box is clipped to the image and
    truncation is the clipped-away area fraction.
    """
    w, h, l = box.extents
    location = box.centroid + np.array([0.0, h / 2.0, 0.0])
    ry = wrap_angle(box.yaw)
    full = project_box(box, K)
    bbox, truncation = full, 0.0
    if image_size is not None:
        bbox = clip_rect(full, *image_size)
        full_area = (full[2] - full[0]) * (full[3] - full[1])
        kept = max(0.0, bbox[2] - bbox[0]) * max(0.0, bbox[3] - bbox[1])
        truncation = float(np.clip(1.0 - kept / full_area, 0.0, 1.0)) if full_area > 0 else 1.0
    return DetectionRecord(
        class_name=class_name,
        truncation=truncation,
        occlusion=occlusion,
        alpha=alpha_from_rotation_y(ry, location),
        bbox2d=tuple(float(v) for v in bbox),
        dimensions=(float(h), float(w), float(l)),
        location=tuple(float(v) for v in location),
        rotation_y=ry,
        score=score,
    )


def check_alpha_consistency(rec: DetectionRecord, tolerance: float = ALPHA_TOLERANCE) -> bool:
    """Warn-only check that alpha matches rotation_y and the viewing ray."""
    if rec.is_dontcare or rec.location[2] <= 0:
        return True
    expected = alpha_from_rotation_y(rec.rotation_y, rec.location)
    gap = abs(wrap_angle(rec.alpha - expected))
    if gap > tolerance:
        logger.warning(
            "Inconsistent alpha for %s at z=%.2f: alpha=%.3f expected=%.3f",
            rec.class_name, rec.location[2], rec.alpha, expected,
        )
        return False
    return True


# =========================================================
# Extent statistics
# =========================================================

def compute_extent_stats(records: Sequence[DetectionRecord], class_name: str = "Car") -> ExtentStats:
    dims = np.array([[r.w, r.h, r.l] for r in records if r.class_name == class_name], dtype=float)
    if len(dims) < 2:
        raise GeometryDomainError(f"Need at least 2 '{class_name}' records for extent stats, got {len(dims)}")
    mean, std = dims.mean(axis=0), dims.std(axis=0)
    if np.any(std <= 0):
        raise GeometryDomainError(f"Degenerate stats for '{class_name}': zero variance in {std}")
    return ExtentStats(*mean.tolist(), *std.tolist())


def save_extent_stats(stats: ExtentStats, path: Path, class_name: str = "Car", count: Optional[int] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = ExtentStatsFile(class_name=class_name, mean=stats.mean.tolist(), std=stats.std.tolist(), count=count)
    path.write_bytes(orjson.dumps(payload.model_dump(by_alias=True, exclude_none=True), option=orjson.OPT_INDENT_2))
    return path


def load_extent_stats(path: Path) -> ExtentStats:
    payload = ExtentStatsFile.model_validate(orjson.loads(Path(path).read_bytes()))
    return ExtentStats(*payload.mean, *payload.std)


# =========================================================
# Calibration, splits, frames
# =========================================================

@dataclass(frozen=True)
class FrameCalibration:
    P2: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.P2, dtype=float).reshape(3, 4)
        object.__setattr__(self, "P2", p)

    @property
    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics.from_projection(self.P2)


def parse_calibration(text: str) -> FrameCalibration:
    entries: Dict[str, List[float]] = {}
    for idx, line in enumerate(text.splitlines(), start=1):
        if ":" not in line:
            continue
        key, _, rest = line.partition(":")
        try:
            entries[key.strip()] = [float(v) for v in rest.split()]
        except ValueError as e:
            raise LabelParseError(f"non-numeric calibration value for {key.strip()}", line_number=idx) from e
    if "P2" not in entries:
        raise LabelParseError("calibration has no P2 entry")
    if len(entries["P2"]) != 12:
        raise LabelParseError(f"P2 needs 12 values, got {len(entries['P2'])}")
    return FrameCalibration(P2=np.array(entries["P2"]))


def format_calibration(calib: FrameCalibration) -> str:
    return "P2: " + " ".join(f"{v:.12e}" for v in calib.P2.reshape(-1)) + "\n"


def read_split(path: Path) -> List[str]:
    return [line.strip() for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def list_frame_ids(root: Path, split: Optional[Path] = None) -> List[str]:
    """Frame ids from a split file, else every label file under root/label_2."""
    if split is not None:
        return read_split(split)
    return sorted(p.stem for p in (Path(root) / "label_2").glob("*.txt"))


@dataclass
class Frame:
    frame_id: str
    labels: List[DetectionRecord] = field(default_factory=list)
    calibration: Optional[FrameCalibration] = None
    image_path: Optional[Path] = None
    depth_path: Optional[Path] = None


def read_label_path(path: Path) -> List[DetectionRecord]:
    try:
        return parse_label_file(Path(path).read_text(encoding="utf-8"))
    except LabelParseError as e:
        raise LabelParseError(f"{path}: {e}", line_number=e.line_number) from e


def load_frame(root: Path, frame_id: str) -> Frame:
    """Read labels + calibration of one frame from a KITTI-style directory tree."""
    root = Path(root)
    labels = read_label_path(root / "label_2" / f"{frame_id}.txt")
    for rec in labels:
        check_alpha_consistency(rec)
    calib_path = root / "calib" / f"{frame_id}.txt"
    calibration = parse_calibration(calib_path.read_text(encoding="utf-8")) if calib_path.exists() else None
    image_path = root / "image_2" / f"{frame_id}.png"
    depth_path = root / "depth" / f"{frame_id}.bin"
    return Frame(
        frame_id=frame_id,
        labels=labels,
        calibration=calibration,
        image_path=image_path if image_path.exists() else None,
        depth_path=depth_path if depth_path.exists() else None,
    )


def load_predictions(
    pred_dir: Path, frame_ids: Sequence[str], workers: int = 1
) -> Tuple[Dict[str, List[DetectionRecord]], List[str]]:
    """Prediction files per frame; frames without a file come back empty and listed as missing."""
    pred_dir = Path(pred_dir)

    def read_one(frame_id: str) -> Optional[List[DetectionRecord]]:
        path = pred_dir / f"{frame_id}.txt"
        return read_label_path(path) if path.exists() else None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(read_one, frame_ids))

    predictions: Dict[str, List[DetectionRecord]] = {}
    missing: List[str] = []
    for frame_id, recs in zip(frame_ids, results):
        if recs is None:
            missing.append(frame_id)
            recs = []
        predictions[frame_id] = recs
    if missing:
        logger.warning("%d frame(s) have no prediction file; treated as empty", len(missing))
    return predictions, missing


def load_frames(root: Path, frame_ids: Sequence[str], workers: int = 1) -> List[Frame]:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda fid: load_frame(root, fid), frame_ids))
