"""
mesh_io.py
File formats for meshes (OBJ, PLY through trimesh) and TSDF volumes.

TSDF layout: one little-endian header record (magic, version, dims,
voxel_size, origin, truncation) followed by float32 voxels, x fastest.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import trimesh

TSDF_MAGIC = b"TSDF"
TSDF_VERSION = 1
TSDF_HEADER = np.dtype(
    [
        ("magic", "S4"),
        ("version", "<u4"),
        ("dims", "<u4", (3,)),
        ("voxel_size", "<f8"),
        ("origin", "<f8", (3,)),
        ("truncation", "<f8"),
    ]
)


# ==========================
# Meshes
# ==========================

def _as_trimesh(vertices: np.ndarray, triangles: np.ndarray, colors: Optional[np.ndarray] = None) -> trimesh.Trimesh:
    kwargs = {}
    if colors is not None:
        rgb = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        kwargs["vertex_colors"] = np.hstack([rgb, np.full((len(rgb), 1), 255, dtype=np.uint8)])
    return trimesh.Trimesh(vertices=np.asarray(vertices, dtype=float), faces=np.asarray(triangles), process=False, **kwargs)


def write_obj(path: Path, vertices: np.ndarray, triangles: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _as_trimesh(vertices, triangles).export(str(path), file_type="obj")
    return path


def write_ply(path: Path, vertices: np.ndarray, triangles: np.ndarray, colors: Optional[np.ndarray] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _as_trimesh(vertices, triangles, colors).export(str(path), file_type="ply")
    return path


def read_mesh(path: Path) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """(vertices, triangles, rgb colors or None)."""
    mesh = trimesh.load(str(path), process=False, force="mesh")
    colors = None
    if getattr(mesh.visual, "kind", None) == "vertex":
        colors = np.asarray(mesh.visual.vertex_colors, dtype=np.uint8)[:, :3].copy()
    return np.asarray(mesh.vertices, dtype=float), np.asarray(mesh.faces, dtype=np.int64), colors


# ==========================
# TSDF volumes
# ==========================

def write_tsdf(path: Path, values: np.ndarray, voxel_size: float, origin: np.ndarray, truncation: float) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.zeros(1, dtype=TSDF_HEADER)
    header["magic"] = TSDF_MAGIC
    header["version"] = TSDF_VERSION
    header["dims"] = values.shape
    header["voxel_size"] = voxel_size
    header["origin"] = np.asarray(origin, dtype=float)
    header["truncation"] = truncation
    with path.open("wb") as f:
        f.write(header.tobytes())
        f.write(np.asarray(values, dtype="<f4").ravel(order="F").tobytes())
    return path


def read_tsdf(path: Path) -> Tuple[np.ndarray, float, np.ndarray, float]:
    """(values, voxel_size, origin, truncation)."""
    data = Path(path).read_bytes()
    if len(data) < TSDF_HEADER.itemsize:
        raise ValueError(f"{path}: truncated TSDF header")
    header = np.frombuffer(data[: TSDF_HEADER.itemsize], dtype=TSDF_HEADER)[0]
    if header["magic"] != TSDF_MAGIC:
        raise ValueError(f"{path}: not a TSDF file")
    dims = tuple(int(d) for d in header["dims"])
    body = np.frombuffer(data[TSDF_HEADER.itemsize :], dtype="<f4")
    if body.size != int(np.prod(dims)):
        raise ValueError(f"{path}: expected {int(np.prod(dims))} voxels, found {body.size}")
    values = body.reshape(dims, order="F").copy()
    return values, float(header["voxel_size"]), np.array(header["origin"], dtype=float), float(header["truncation"])
