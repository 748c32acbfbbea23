import logging
from typing import Any, Dict

from src.core.detection_metrics import evaluate_dataset
from src.core.schemas.report_schema import EvaluationReport
from src.core.state import EvaluationState

logger = logging.getLogger(__name__)


def score_detections(state: EvaluationState) -> Dict[str, Any]:
    cfg = state.config
    preds = [state.filtered.get(fid, []) for fid in state.frame_ids]
    gts = [state.ground_truth.get(fid, []) for fid in state.frame_ids]

    entries = evaluate_dataset(
        preds, gts, class_name=cfg.class_name, iou_thresholds=cfg.iou_thresholds, ap_points=cfg.ap_points
    )
    report = EvaluationReport(
        run_config=cfg.model_dump(mode="json"),
        class_name=cfg.class_name,
        ap_points=cfg.ap_points,
        frames=len(state.frame_ids),
        missing_frames=list(state.missing_frames),
        entries=entries,
    )
    logger.info("Scored %d AP entries over %d frames", len(entries), report.frames)
    return {"report": report}
