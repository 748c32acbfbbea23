"""
image_io.py
PNG and depth raster I/O. Images are RGB uint8 in memory; OpenCV's BGR
order only exists on disk.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import cv2
import numpy as np


def read_png(path: Path) -> np.ndarray:
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise OSError(f"Could not read image: {path}")
    return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)


def write_png(path: Path, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(np.ascontiguousarray(rgb, dtype=np.uint8), cv2.COLOR_RGB2BGR)):
        raise OSError(f"Could not write image: {path}")
    return path


def read_depth(path: Path, shape: Tuple[int, int]) -> np.ndarray:
    """Raw little-endian float32 raster, row-major (height, width)."""
    data = np.fromfile(str(path), dtype="<f4")
    height, width = shape
    if data.size != height * width:
        raise OSError(f"{path}: expected {height * width} depth values, found {data.size}")
    return data.reshape(height, width).astype(np.float32)


def write_depth(path: Path, depth: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(depth, dtype="<f4").tofile(str(path))
    return path
