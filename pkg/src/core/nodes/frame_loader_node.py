import logging
from typing import Any, Dict

from src.core.kitti_dataset import list_frame_ids, load_frames, load_predictions
from src.core.state import EvaluationState

logger = logging.getLogger(__name__)


def ensure_frames_loaded(state: EvaluationState) -> Dict[str, Any]:
    if state.frames_loaded:
        return {}

    cfg = state.config
    frame_ids = list_frame_ids(cfg.data_root, cfg.split)

    frames = load_frames(cfg.data_root, frame_ids, workers=cfg.workers)
    predictions, missing = load_predictions(cfg.pred_dir, frame_ids, workers=cfg.workers)
    logger.info("Loaded %d frames (%d without predictions)", len(frame_ids), len(missing))

    return {
        "frame_ids": frame_ids,
        "ground_truth": {f.frame_id: f.labels for f in frames},
        "predictions": predictions,
        "missing_frames": missing,
        "frames_loaded": True,
    }
