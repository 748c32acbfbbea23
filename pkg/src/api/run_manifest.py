"""
run_manifest.py
Per-frame job tracking for batch subcommands. The manifest is flushed to
JSON after every status change so an aborted run leaves a partial record.
"""

from __future__ import annotations

from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import orjson

# ============================================================
# Manifest keys
# ============================================================

MANIFEST_KEY_SEED = "seed"
MANIFEST_KEY_K_MAX = "k_max"
MANIFEST_KEY_FRAMES = "frames"
MANIFEST_KEY_TOTAL_PLACEMENTS = "total_placements"
MANIFEST_KEY_ABORTED = "aborted"
MANIFEST_KEY_CONFIG = "config"

JOB_KEY_FRAME_ID = "frame_id"
JOB_KEY_STATUS = "status"
JOB_KEY_PLACEMENTS = "placements"
JOB_KEY_MESH_IDS = "mesh_ids"
JOB_KEY_ERROR = "error"


class JobStatus(str, Enum):
    PENDING = "pending"
    COMPLETED = "completed"
    FAILED = "failed"


class FrameJob:
    """Augmentation of one frame."""

    def __init__(
        self,
        frame_id: str,
        status: JobStatus = JobStatus.PENDING,
        on_change: Optional[Callable[[], Any]] = None,
    ):
        self.frame_id = frame_id
        self.status = status
        self._on_change = on_change
        self.mesh_ids: List[str] = []
        self.error: Optional[str] = None

    @property
    def placements(self) -> int:
        return len(self.mesh_ids)

    def to_dict(self) -> Dict[str, Any]:
        return {
            JOB_KEY_FRAME_ID: self.frame_id,
            JOB_KEY_STATUS: self.status.value,
            JOB_KEY_PLACEMENTS: self.placements,
            JOB_KEY_MESH_IDS: list(self.mesh_ids),
            JOB_KEY_ERROR: self.error,
        }

    def update_status(self, status: JobStatus, *, mesh_ids: Optional[List[str]] = None, error: Optional[str] = None):
        self.status = status
        if mesh_ids is not None:
            self.mesh_ids = list(mesh_ids)
        if error is not None:
            self.error = error
        if self._on_change is not None:
            self._on_change()


class RunManifest:
    """Jobs in frame order plus the run's seed and config; no wall-clock fields so reruns compare equal.

    Every job status change rewrites the file.
    """

    def __init__(
        self,
        path: Path,
        seed: int,
        k_max: int,
        frame_ids: List[str],
        config: Optional[Dict[str, Any]] = None,
    ):
        self.path = Path(path)
        self.seed = seed
        self.k_max = k_max
        self.config: Dict[str, Any] = dict(config or {})
        self.aborted = False
        self._jobs: Dict[str, FrameJob] = {fid: FrameJob(fid, on_change=self.flush) for fid in frame_ids}

    def get_job(self, frame_id: str) -> Optional[FrameJob]:
        return self._jobs.get(frame_id)

    @property
    def jobs(self) -> List[FrameJob]:
        return list(self._jobs.values())

    @property
    def total_placements(self) -> int:
        return sum(j.placements for j in self._jobs.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            MANIFEST_KEY_SEED: self.seed,
            MANIFEST_KEY_K_MAX: self.k_max,
            MANIFEST_KEY_CONFIG: self.config,
            MANIFEST_KEY_ABORTED: self.aborted,
            MANIFEST_KEY_TOTAL_PLACEMENTS: self.total_placements,
            MANIFEST_KEY_FRAMES: [j.to_dict() for j in self._jobs.values()],
        }

    def flush(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(orjson.dumps(self.to_dict(), option=orjson.OPT_INDENT_2))
        return self.path

    @staticmethod
    def load(path: Path) -> Dict[str, Any]:
        return orjson.loads(Path(path).read_bytes())
