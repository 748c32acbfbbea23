import logging
from typing import Any, Dict, List

from src.core.detection_metrics import nms
from src.core.schemas.detection_schema import DetectionRecord
from src.core.state import EvaluationState

logger = logging.getLogger(__name__)


def filter_frame(dets: List[DetectionRecord], class_name: str, nms2d: float, nms_bev: float) -> List[DetectionRecord]:
    """Class filter, then 2D suppression, then BEV suppression."""
    own = [d for d in dets if d.class_name == class_name]
    return nms(nms(own, mode="iou2d", threshold=nms2d), mode="bev", threshold=nms_bev)


def filter_detections(state: EvaluationState) -> Dict[str, Any]:
    cfg = state.config
    filtered = {
        fid: filter_frame(state.predictions.get(fid, []), cfg.class_name, cfg.nms2d, cfg.nms_bev)
        for fid in state.frame_ids
    }
    before = sum(len(v) for v in state.predictions.values())
    after = sum(len(v) for v in filtered.values())
    logger.info("Suppression kept %d of %d predictions", after, before)
    return {"filtered": filtered}
