"""
detection_metrics.py
IoU in image space, bird's eye view and 3D; greedy NMS; average precision
with KITTI-style ignore regions; recall binned by depth or azimuth.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import orjson
from scipy.spatial import ConvexHull

from src.core.camera_geometry import Box3D, Rect
from src.core.errors import MissingScoreError, UnsupportedGeometryError
from src.core.kitti_dataset import classify_difficulty, record_to_box3d
from src.core.schemas.detection_schema import EVAL_DIFFICULTIES, DetectionRecord, Difficulty
from src.core.schemas.report_schema import ApEntry, BinnedRecallRow, EvaluationReport
from src.core.tools.polygon_clip import intersection_area, polygon_area

logger = logging.getLogger(__name__)

GRAVITY_TOL = 1e-6
RECALL_EPS = 1e-12

# classes whose ground truth is neither required nor penalised when evaluating a class
NEIGHBOR_CLASSES: Dict[str, Tuple[str, ...]] = {
    "Car": ("Van",),
    "Pedestrian": ("Person_sitting",),
}

OverlapFn = Callable[[DetectionRecord, DetectionRecord], float]


# =========================================================
# IoU
# =========================================================

def iou_2d(a: Rect, b: Rect) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def _area_fraction_inside(a: Rect, region: Rect) -> float:
    iw = min(a[2], region[2]) - max(a[0], region[0])
    ih = min(a[3], region[3]) - max(a[1], region[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    return float(iw * ih / ((a[2] - a[0]) * (a[3] - a[1])))


@dataclass(frozen=True)
class RotatedRect:
    center: Tuple[float, float]
    size: Tuple[float, float]
    yaw: float

    def __post_init__(self) -> None:
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError(f"RotatedRect sizes must be positive, got {self.size}")

    @property
    def area(self) -> float:
        return self.size[0] * self.size[1]

    def polygon(self) -> np.ndarray:
        """Footprint corners in (x, z), width along object x, length along object z."""
        hw, hl = self.size[0] / 2.0, self.size[1] / 2.0
        local = np.array([[hw, hl], [-hw, hl], [-hw, -hl], [hw, -hl]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * local[:, 0] + s * local[:, 1]
        z = -s * local[:, 0] + c * local[:, 1]
        return np.stack([x + self.center[0], z + self.center[1]], axis=1)

    @classmethod
    def from_record(cls, rec: DetectionRecord) -> "RotatedRect":
        return cls(center=(rec.location[0], rec.location[2]), size=(rec.w, rec.l), yaw=rec.rotation_y)


def rect_from_box3d(box: Box3D) -> np.ndarray:
    """BEV footprint: convex hull of the corners projected to x-z."""
    pts = box.corners[:, [0, 2]]
    hull = ConvexHull(pts)
    return pts[hull.vertices]


Footprint = Union[RotatedRect, np.ndarray]


def _as_polygon(f: Footprint) -> np.ndarray:
    return f.polygon() if isinstance(f, RotatedRect) else np.asarray(f, dtype=float)


def iou_bev(a: Footprint, b: Footprint) -> float:
    pa, pb = _as_polygon(a), _as_polygon(b)
    inter = intersection_area(pa, pb)
    if inter <= 0:
        return 0.0
    union = polygon_area(pa) + polygon_area(pb) - inter
    return float(min(1.0, inter / union))


def _gravity_footprint(box: Box3D) -> Tuple[np.ndarray, float, float]:
    c = box.corners
    h_axis = c[0] - c[2]
    h_axis = h_axis / np.linalg.norm(h_axis)
    if np.linalg.norm(np.cross(h_axis, [0.0, 1.0, 0.0])) > GRAVITY_TOL:
        raise UnsupportedGeometryError("iou_3d needs yaw-only boxes; got roll or pitch")
    footprint = c[[0, 1, 5, 4]][:, [0, 2]]
    return footprint, float(c[:, 1].min()), float(c[:, 1].max())


def iou_3d(a: Box3D, b: Box3D) -> float:
    fa, ya0, ya1 = _gravity_footprint(a)
    fb, yb0, yb1 = _gravity_footprint(b)
    overlap_y = min(ya1, yb1) - max(ya0, yb0)
    if overlap_y <= 0:
        return 0.0
    inter_area = intersection_area(fa, fb)
    if inter_area <= 0:
        return 0.0
    inter = inter_area * overlap_y
    union = polygon_area(fa) * (ya1 - ya0) + polygon_area(fb) * (yb1 - yb0) - inter
    return float(min(1.0, inter / union))


def overlap_2d(p: DetectionRecord, g: DetectionRecord) -> float:
    return iou_2d(p.bbox2d, g.bbox2d)


def overlap_bev(p: DetectionRecord, g: DetectionRecord) -> float:
    return iou_bev(RotatedRect.from_record(p), RotatedRect.from_record(g))


def overlap_3d(p: DetectionRecord, g: DetectionRecord) -> float:
    return iou_3d(record_to_box3d(p), record_to_box3d(g))


METRICS: Dict[str, OverlapFn] = {"2d": overlap_2d, "bev": overlap_bev, "3d": overlap_3d}


# =========================================================
# NMS
# =========================================================

def nms(
    dets: Sequence[DetectionRecord],
    mode: Literal["iou2d", "bev"] = "iou2d",
    threshold: float = 0.65,
) -> List[DetectionRecord]:
    """Greedy suppression; equal scores keep input order."""
    if any(d.score is None for d in dets):
        raise MissingScoreError("NMS needs a score on every detection")
    overlap = overlap_2d if mode == "iou2d" else overlap_bev
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept: List[int] = []
    for i in order:
        if all(overlap(dets[i], dets[k]) <= threshold for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]


# =========================================================
# Average precision
# =========================================================

@dataclass(frozen=True)
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: Optional[float]
    n_gt: int
    n_pred: int
    points: int = 11
    aos: Optional[float] = None

    @property
    def available(self) -> bool:
        return self.ap is not None


def recall_grid(points: int) -> np.ndarray:
    if points == 11:
        return np.linspace(0.0, 1.0, 11)
    if points == 40:
        return np.linspace(1.0 / 40.0, 1.0, 40)
    raise ValueError(f"ap_points must be 11 or 40, got {points}")


def interpolated_ap(recall: np.ndarray, precision: np.ndarray, points: int = 11) -> float:
    total = 0.0
    for r in recall_grid(points):
        mask = recall >= r - RECALL_EPS
        total += float(precision[mask].max()) if mask.any() else 0.0
    return total / points


def _frame_statistics(
    preds: Sequence[DetectionRecord],
    gts: Sequence[DetectionRecord],
    difficulty: Difficulty,
    overlap_fn: OverlapFn,
    iou_threshold: float,
    class_name: str,
    orientation_fn: Optional[OverlapFn],
) -> Tuple[int, List[Tuple[float, int, int, float]]]:
    """Returns (#valid GT, [(score, -index, is_tp, similarity)]) for scored, non-ignored predictions.

    Predictions below the difficulty's minimum 2D height are still scored as
    false positives when unmatched; only overlap with ignored ground truth or
    a DontCare region makes a prediction ignored. This departs from the KITTI devkit,
    which also ignores short detections.
    """
    neighbors = NEIGHBOR_CLASSES.get(class_name, ())
    valid, ignored, dontcare = [], [], []
    for g in gts:
        if g.is_dontcare:
            dontcare.append(g)
        elif g.class_name == class_name and difficulty.admits(classify_difficulty(g)):
            valid.append(g)
        elif g.class_name == class_name or g.class_name in neighbors:
            ignored.append(g)

    own = [(i, p) for i, p in enumerate(preds) if p.class_name == class_name]
    if any(p.score is None for _, p in own):
        raise MissingScoreError("Average precision needs scored predictions")
    own.sort(key=lambda ip: (-ip[1].score, ip[0]))

    matched = [False] * len(valid)
    rows: List[Tuple[float, int, int, float]] = []
    for idx, p in own:
        best, best_j = -1.0, -1
        for j, g in enumerate(valid):
            if matched[j]:
                continue
            ov = overlap_fn(p, g)
            if ov >= iou_threshold and ov > best:
                best, best_j = ov, j
        if best_j >= 0:
            matched[best_j] = True
            sim = orientation_fn(p, valid[best_j]) if orientation_fn else 1.0
            rows.append((p.score, idx, 1, sim))
            continue
        if any(overlap_fn(p, g) >= iou_threshold for g in ignored):
            continue
        if any(_area_fraction_inside(p.bbox2d, d.bbox2d) >= iou_threshold for d in dontcare):
            continue
        rows.append((p.score, idx, 0, 0.0))
    return len(valid), rows


def average_precision(
    preds: Sequence[Sequence[DetectionRecord]],
    gts: Sequence[Sequence[DetectionRecord]],
    difficulty: Difficulty,
    overlap_fn: OverlapFn,
    iou_threshold: float,
    *,
    class_name: str = "Car",
    ap_points: int = 11,
    orientation_fn: Optional[OverlapFn] = None,
) -> PrCurve:
    """AP over frames; ``preds[k]`` and ``gts[k]`` belong to the same frame.

    Predictions are matched greedily per frame, highest score first. Ground
    truth harder than ``difficulty`` and DontCare regions absorb predictions
    without counting them. ``orientation_fn`` is an optional similarity hook
    for orientation-aware precision; it is not part of the default scoring.
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must list the same frames")
    n_gt = 0
    rows: List[Tuple[float, int, int, int, float]] = []
    for frame, (fp, fg) in enumerate(zip(preds, gts)):
        count, frame_rows = _frame_statistics(fp, fg, difficulty, overlap_fn, iou_threshold, class_name, orientation_fn)
        n_gt += count
        rows.extend((score, frame, idx, tp, sim) for score, idx, tp, sim in frame_rows)

    if n_gt == 0:
        return PrCurve(np.zeros(0), np.zeros(0), None, 0, len(rows), ap_points)

    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    tp = np.array([r[3] for r in rows], dtype=float)
    sim = np.array([r[4] for r in rows], dtype=float)
    cum_tp = np.cumsum(tp)
    cum_det = np.arange(1, len(rows) + 1, dtype=float)
    recall = cum_tp / n_gt
    precision = cum_tp / cum_det if len(rows) else np.zeros(0)

    ap = interpolated_ap(recall, precision, ap_points)
    aos = None
    if orientation_fn is not None:
        aos = interpolated_ap(recall, np.cumsum(sim) / cum_det, ap_points) if len(rows) else 0.0
    return PrCurve(recall, precision, ap, n_gt, len(rows), ap_points, aos)


def evaluate_dataset(
    preds: Sequence[Sequence[DetectionRecord]],
    gts: Sequence[Sequence[DetectionRecord]],
    *,
    class_name: str = "Car",
    iou_thresholds: Sequence[float] = (0.7, 0.5),
    ap_points: int = 11,
    metrics: Sequence[str] = ("2d", "bev", "3d"),
) -> List[ApEntry]:
    entries: List[ApEntry] = []
    for metric in metrics:
        for thr in iou_thresholds:
            for difficulty in EVAL_DIFFICULTIES:
                curve = average_precision(
                    preds, gts, difficulty, METRICS[metric], thr, class_name=class_name, ap_points=ap_points
                )
                entries.append(
                    ApEntry(
                        metric=metric,
                        difficulty=difficulty.value,
                        iou_threshold=thr,
                        ap=curve.ap,
                        n_gt=curve.n_gt,
                        n_pred=curve.n_pred,
                        recall=curve.recall.tolist(),
                        precision=curve.precision.tolist(),
                    )
                )
    return entries


def write_report(report: EvaluationReport, out_dir: Path) -> Tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_bytes(orjson.dumps(report.model_dump(), option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY))

    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "difficulty", "iou_threshold", "ap", "n_gt", "n_pred"])
        for e in report.entries:
            writer.writerow(
                [e.metric, e.difficulty, f"{e.iou_threshold:.2f}", "n/a" if e.ap is None else f"{e.ap:.6f}", e.n_gt, e.n_pred]
            )
    return json_path, csv_path


# =========================================================
# Binned recall
# =========================================================

@dataclass(frozen=True)
class BinnedRecall:
    bin_spec: Literal["depth", "azimuth"]
    edges: np.ndarray
    counts: np.ndarray
    matched: np.ndarray

    @property
    def recall(self) -> List[Optional[float]]:
        return [None if c == 0 else float(m / c) for c, m in zip(self.counts, self.matched)]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def rows(self) -> List[BinnedRecallRow]:
        return [
            BinnedRecallRow(
                bin_spec=self.bin_spec,
                lower=float(self.edges[i]),
                upper=float(self.edges[i + 1]),
                count=int(self.counts[i]),
                matched=int(self.matched[i]),
                recall=r,
            )
            for i, r in enumerate(self.recall)
        ]


def default_bin_edges(bin_spec: str, width: float, max_depth: float = 80.0) -> np.ndarray:
    """Depth: [0, max_depth] in ``width`` meters. Azimuth: [-pi, pi] in ``width`` degrees."""
    if width <= 0:
        raise ValueError("Bin width must be positive")
    if bin_spec == "depth":
        upper = width * math.ceil(max_depth / width)
        return np.arange(0.0, upper + width / 2.0, width)
    degrees = np.arange(-180.0, 180.0, width)
    return np.append(np.deg2rad(degrees), math.pi)


def binned_recall(
    preds: Sequence[Sequence[DetectionRecord]],
    gts: Sequence[Sequence[DetectionRecord]],
    bin_spec: Literal["depth", "azimuth"],
    edges: Sequence[float],
    *,
    accept: float = 0.5,
    class_name: str = "Car",
    difficulty: Difficulty = Difficulty.HARD,
) -> BinnedRecall:
    """Per-bin fraction of ground truth with an accepted prediction (BEV IoU >= accept).

    Azimuth is rotation_y, KITTI convention. Ground truth outside the edges is not counted.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("Bin edges must be strictly increasing")
    counts = np.zeros(len(edges) - 1, dtype=int)
    matched = np.zeros(len(edges) - 1, dtype=int)

    for fp, fg in zip(preds, gts):
        candidates = [RotatedRect.from_record(p) for p in fp if p.class_name == class_name]
        for g in fg:
            if g.class_name != class_name or not difficulty.admits(classify_difficulty(g)):
                continue
            value = g.location[2] if bin_spec == "depth" else g.rotation_y
            if value < edges[0] or value > edges[-1]:
                continue
            b = min(int(np.searchsorted(edges, value, side="right")) - 1, len(counts) - 1)
            counts[b] += 1
            rect = RotatedRect.from_record(g)
            if any(iou_bev(c, rect) >= accept for c in candidates):
                matched[b] += 1
    return BinnedRecall(bin_spec=bin_spec, edges=edges, counts=counts, matched=matched)


def write_binned_recall_csv(results: Sequence[BinnedRecall], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_spec", "lower", "upper", "count", "matched", "recall"])
        for res in results:
            for row in res.rows():
                writer.writerow(
                    [row.bin_spec, f"{row.lower:.6f}", f"{row.upper:.6f}", row.count, row.matched,
                     "n/a" if row.recall is None else f"{row.recall:.6f}"]
                )
    return path
