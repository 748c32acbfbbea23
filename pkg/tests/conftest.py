import shutil
from pathlib import Path

import numpy as np
import pytest

from src.core.camera_geometry import CameraIntrinsics, ExtentStats
from src.core.schemas.detection_schema import DetectionRecord

FIXTURES = Path(__file__).parent / "fixtures"

KITTI_P2 = (
    "P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 "
    "0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 "
    "0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n"
)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size acceptance sweeps")


@pytest.fixture
def K() -> CameraIntrinsics:
    return CameraIntrinsics(fx=721.5377, fy=721.5377, cx=609.5593, cy=172.854)


@pytest.fixture
def car_stats() -> ExtentStats:
    return ExtentStats(1.62, 1.53, 3.89, 0.10, 0.14, 0.43)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def label_fixture_text() -> str:
    return (FIXTURES / "kitti_labels_50.txt").read_text(encoding="utf-8")


@pytest.fixture
def golden_root(tmp_path) -> Path:
    """5-frame dataset with predictions; 11-point AP is 7.2 / 11 for every metric."""
    root = tmp_path / "golden"
    shutil.copytree(FIXTURES / "golden", root)
    return root


def make_record(
    class_name: str = "Car",
    bbox=(100.0, 100.0, 200.0, 200.0),
    location=(0.0, 1.6, 20.0),
    dimensions=(1.5, 1.6, 3.9),
    rotation_y: float = 0.0,
    score=None,
    truncation: float = 0.0,
    occlusion: int = 0,
) -> DetectionRecord:
    return DetectionRecord(
        class_name=class_name,
        truncation=truncation,
        occlusion=occlusion,
        alpha=0.0,
        bbox2d=tuple(bbox),
        dimensions=tuple(dimensions),
        location=tuple(location),
        rotation_y=rotation_y,
        score=score,
    )
