"""
texturing_augmentation.py
Projective mesh texturing with symmetry completion, a z-buffer rasterizer
and the synthetic-car compositor used for 3D data augmentation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple

import cv2
import numpy as np
import orjson
from scipy.spatial import cKDTree

from src.core.camera_geometry import (
    Box3D,
    CameraIntrinsics,
    Pose,
    Quaternion,
    allo_to_ego,
    backproject,
    ego_to_allo,
    instantiate_box,
    wrap_angle,
)
from src.core.detection_metrics import iou_bev, rect_from_box3d
from src.core.errors import GeometryDomainError, PlacementFailure
from src.core.kitti_dataset import box3d_to_record, record_to_box3d
from src.core.schemas.detection_schema import DetectionRecord
from src.core.schemas.shape_schema import MeshBankIndex
from src.core.shape_space import TriMesh
from src.core.tools import quaternion as qt
from src.core.tools.mesh_io import read_mesh

logger = logging.getLogger(__name__)

SENTINEL_COLOR = (255, 0, 0)
NEUTRAL_COLOR = (128, 128, 128)
MIRROR_TOL = 1e-3
NEAR_PLANE = 1e-3
_REMAP_WIDTH = 1024
MESH_BANK_INDEX = "meshes.json"


# ==========================
# Types
# ==========================

@dataclass
class SceneImage:
    rgb: np.ndarray
    intrinsics: CameraIntrinsics
    depth: Optional[np.ndarray] = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise GeometryDomainError(f"rgb must be HxWx3, got {self.rgb.shape}")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float32)
            if self.depth.shape != self.rgb.shape[:2]:
                raise GeometryDomainError(f"depth {self.depth.shape} does not match rgb {self.rgb.shape[:2]}")

    @property
    def height(self) -> int:
        return int(self.rgb.shape[0])

    @property
    def width(self) -> int:
        return int(self.rgb.shape[1])

    def copy(self) -> "SceneImage":
        return SceneImage(self.rgb.copy(), self.intrinsics, None if self.depth is None else self.depth.copy())


@dataclass(frozen=True)
class PlacementConfig:
    z_min: float = 5.0
    z_max: float = 60.0
    max_perturbation_deg: float = 10.0
    perturbation: Literal["yaw", "so3"] = "yaw"
    retries: int = 50
    class_name: str = "Car"

    def __post_init__(self):
        if not 0 < self.z_min <= self.z_max:
            raise GeometryDomainError(f"invalid depth range [{self.z_min}, {self.z_max}]")
        if self.max_perturbation_deg < 0 or self.retries < 1:
            raise GeometryDomainError("perturbation bound must be >= 0 and retries >= 1")

    @property
    def max_perturbation(self) -> float:
        return math.radians(self.max_perturbation_deg)


@dataclass(frozen=True)
class PlacementSample:
    """
    pixel_ray is the (u, v) the translation projects to; depth_along_ray is
    the camera z of the translation. rotation_perturbation is the signed yaw
    (yaw mode) or the rotation angle (so3 mode) applied to the allocentric pose.
    """

    pixel_ray: Tuple[float, float]
    depth_along_ray: float
    rotation_perturbation: float
    source_allocentric: Quaternion
    attempts: int = 1


@dataclass(frozen=True)
class MeshBankItem:
    id: str
    mesh: TriMesh
    class_tag: str = "Car"
    allocentric: Optional[Quaternion] = None


@dataclass(frozen=True)
class Placement:
    mesh_id: str
    sample: PlacementSample
    pose: Pose
    box: Box3D
    record: DetectionRecord
    mask: np.ndarray = field(repr=False)


@dataclass
class AugmentedFrame:
    image: SceneImage
    labels: List[DetectionRecord]
    placements: List[Placement] = field(default_factory=list)


# ==========================
# Texturing
# ==========================

def _bilinear_sample(rgb: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    n = len(u)
    if n == 0:
        return np.zeros((0, 3))
    rows = -(-n // _REMAP_WIDTH)
    pad = rows * _REMAP_WIDTH - n
    mx = np.pad(u.astype(np.float32), (0, pad)).reshape(rows, _REMAP_WIDTH)
    my = np.pad(v.astype(np.float32), (0, pad)).reshape(rows, _REMAP_WIDTH)
    out = cv2.remap(rgb.astype(np.float32), mx, my, interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return out.reshape(-1, 3)[:n]


def texture_mesh(
    mesh: TriMesh,
    pose: Pose,
    image: SceneImage,
    *,
    mirror_tol: float = MIRROR_TOL,
    sentinel: Tuple[int, int, int] = SENTINEL_COLOR,
) -> TriMesh:
    """
    Color vertices from the image they were observed in.

    Vertices whose normal faces the camera and that project inside the image
    take the bilinearly sampled color. The rest copy the color of their mirror
    image across the object's x = 0 plane when that partner was colored
    directly; anything left gets the sentinel.
    """
    K = image.intrinsics
    R = pose.q.to_matrix()
    cam = pose.transform(mesh.vertices)
    if np.any(cam[:, 2] <= 0):
        raise GeometryDomainError("posed mesh must lie in front of the camera")
    normals = mesh.vertex_normals() @ R.T
    facing = np.einsum("ij,ij->i", normals, cam) < 0

    u = K.fx * cam[:, 0] / cam[:, 2] + K.cx
    v = K.fy * cam[:, 1] / cam[:, 2] + K.cy
    in_image = (u >= 0) & (u <= image.width - 1) & (v >= 0) & (v <= image.height - 1)
    direct = facing & in_image

    colors = np.tile(np.asarray(sentinel, dtype=np.uint8), (len(mesh.vertices), 1))
    sampled = _bilinear_sample(image.rgb, u[direct], v[direct])
    colors[direct] = np.clip(np.rint(sampled), 0, 255).astype(np.uint8)

    if len(mesh.vertices):
        mirrored = mesh.vertices * np.array([-1.0, 1.0, 1.0])
        dist, partner = cKDTree(mesh.vertices).query(mirrored)
        fill = ~direct & (dist <= mirror_tol) & direct[partner]
        colors[fill] = colors[partner[fill]]
        logger.debug(
            "texture_mesh: %d direct, %d mirrored, %d unresolved",
            int(direct.sum()), int(fill.sum()), int((~direct & ~fill).sum()),
        )
    return mesh.with_colors(colors)


# ==========================
# Rasterizer
# ==========================

def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _rasterize_into(
    cam: np.ndarray, triangles: np.ndarray, colors: np.ndarray, K: CameraIntrinsics, rgb: np.ndarray, zbuf: np.ndarray
) -> np.ndarray:
    height, width = zbuf.shape
    mask = np.zeros((height, width), dtype=bool)
    z_all = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u_all = K.fx * cam[:, 0] / z_all + K.cx
        v_all = K.fy * cam[:, 1] / z_all + K.cy
    cols = colors.astype(float)

    for tri in triangles:
        z = z_all[tri]
        if np.any(z <= NEAR_PLANE):
            continue  # no near-plane clipping
        u, v = u_all[tri], v_all[tri]
        area = _edge(u[0], v[0], u[1], v[1], u[2], v[2])
        if abs(area) < 1e-12:
            continue
        x0, x1 = max(math.ceil(u.min()), 0), min(math.floor(u.max()), width - 1)
        y0, y1 = max(math.ceil(v.min()), 0), min(math.floor(v.max()), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1, dtype=float), np.arange(y0, y1 + 1, dtype=float))
        b0 = _edge(u[1], v[1], u[2], v[2], px, py) / area
        b1 = _edge(u[2], v[2], u[0], v[0], px, py) / area
        b2 = 1.0 - b0 - b1
        inside = (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
        if not inside.any():
            continue
        # perspective-correct: 1/z and color/z are affine in screen space
        w0, w1, w2 = b0 / z[0], b1 / z[1], b2 / z[2]
        inv_z = w0 + w1 + w2
        depth = 1.0 / inv_z
        zsub = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (depth < zsub)
        if not win.any():
            continue
        c = (w0[..., None] * cols[tri[0]] + w1[..., None] * cols[tri[1]] + w2[..., None] * cols[tri[2]]) / inv_z[..., None]
        zsub[win] = depth[win]
        rgb[y0 : y1 + 1, x0 : x1 + 1][win] = np.clip(np.rint(c[win]), 0, 255).astype(np.uint8)
        mask[y0 : y1 + 1, x0 : x1 + 1] |= win
    return mask


def empty_depth_mask(depth: np.ndarray) -> np.ndarray:
    return ~np.isfinite(depth) | (depth <= 0)


def rasterize(
    mesh: TriMesh, pose: Pose, image: SceneImage, *, return_mask: bool = False
):
    """
    Z-buffered composition of a colored mesh over the image.

    Pixel centres sit at integer (u, v). Existing depth (non-finite or <= 0
    counts as empty) seeds the z-buffer; covered pixels take the barycentric
    vertex color and, when the image carries depth, the mesh depth.
    """
    colors = mesh.colors if mesh.colors is not None else np.tile(np.array(NEUTRAL_COLOR, np.uint8), (len(mesh.vertices), 1))
    out = image.copy()
    if out.depth is not None:
        zbuf = np.where(empty_depth_mask(out.depth), np.inf, out.depth.astype(float))
    else:
        zbuf = np.full((image.height, image.width), np.inf)
    mask = _rasterize_into(pose.transform(mesh.vertices), mesh.triangles, colors, image.intrinsics, out.rgb, zbuf)
    if out.depth is not None:
        out.depth[mask] = zbuf[mask].astype(np.float32)
    return (out, mask) if return_mask else out


# ==========================
# Placement
# ==========================

def _perturbation(rng: np.random.Generator, config: PlacementConfig) -> Tuple[Quaternion, float]:
    bound = config.max_perturbation
    if config.perturbation == "yaw":
        angle = float(rng.uniform(-bound, bound)) if bound > 0 else 0.0
        return Quaternion.about_y(angle), angle
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = float(rng.uniform(0.0, bound)) if bound > 0 else 0.0
    return Quaternion.from_array(qt.quat_from_rotvec(axis * angle)), angle


def place_along_ray(
    source_pose: Pose, u: float, v: float, z: float, perturbation: Quaternion, K: CameraIntrinsics
) -> Pose:
    """Move an object to pixel (u, v) at depth z keeping its allocentric pose (then perturbed)."""
    q_allo = ego_to_allo(source_pose.q, source_pose.t)
    t = backproject(K, u, v, z)
    return Pose(allo_to_ego(q_allo * perturbation, t).normalized(), t)


def sample_placement(
    rng: np.random.Generator,
    image: SceneImage,
    existing: Sequence[Box3D],
    source_pose: Pose,
    extents: Sequence[float],
    config: PlacementConfig = PlacementConfig(),
) -> Tuple[PlacementSample, Pose, Box3D]:
    """
    Uniform pixel ray, uniform depth in [z_min, z_max], perturbed allocentric
    rotation. Samples whose BEV footprint overlaps an existing box, or that
    reach behind the camera, are redrawn up to ``config.retries`` times.
    """
    K = image.intrinsics
    w, h, l = (float(e) for e in extents)
    source_allo = ego_to_allo(source_pose.q, source_pose.t)
    footprints = [rect_from_box3d(b) for b in existing]

    for attempt in range(1, config.retries + 1):
        u = float(rng.uniform(0.0, image.width - 1))
        v = float(rng.uniform(0.0, image.height - 1))
        z = float(rng.uniform(config.z_min, config.z_max))
        q_pert, angle = _perturbation(rng, config)
        pose = place_along_ray(source_pose, u, v, z, q_pert, K)
        box = instantiate_box(pose.q, pose.t, w, h, l)
        if np.any(box.corners[:, 2] <= NEAR_PLANE):
            continue
        footprint = rect_from_box3d(box)
        if any(iou_bev(footprint, other) > 0.0 for other in footprints):
            continue
        sample = PlacementSample((u, v), z, angle, source_allo, attempts=attempt)
        return sample, pose, box
    raise PlacementFailure(f"no free placement after {config.retries} attempts")


# ==========================
# Frame augmentation
# ==========================

def _centered(mesh: TriMesh) -> TriMesh:
    lo, hi = mesh.bounds
    return TriMesh(mesh.vertices - (lo + hi) / 2.0, mesh.triangles, mesh.colors)


def augment_frame(
    image: SceneImage,
    labels: Sequence[DetectionRecord],
    mesh_bank: Sequence[MeshBankItem],
    k_max: int = 3,
    rng: Optional[np.random.Generator] = None,
    config: PlacementConfig = PlacementConfig(),
) -> AugmentedFrame:
    """
    Insert between 1 and ``k_max`` textured cars into a frame.

    Placements are drawn one by one so that each new car avoids every labeled
    box and every car placed before it. Cars are rendered far to near into
    rgb (and depth when present); one record per rendered car is appended to
    a copy of ``labels``.
    """
    if k_max <= 0:
        return AugmentedFrame(image.copy(), list(labels))
    if not mesh_bank:
        raise GeometryDomainError("mesh bank is empty")
    rng = rng if rng is not None else np.random.default_rng()

    existing = [record_to_box3d(r) for r in labels if not r.is_dontcare and min(r.dimensions) > 0]
    wanted = int(rng.integers(1, k_max + 1))
    drawn: List[Tuple[MeshBankItem, TriMesh, PlacementSample, Pose, Box3D]] = []
    for _ in range(wanted):
        item = mesh_bank[int(rng.integers(len(mesh_bank)))]
        mesh = _centered(item.mesh)
        q_allo = item.allocentric if item.allocentric is not None else Quaternion.about_y(float(rng.uniform(-math.pi, math.pi)))
        source = Pose(q_allo, np.array([0.0, 0.0, config.z_min]))
        try:
            sample, pose, box = sample_placement(rng, image, existing, source, mesh.extents, config)
        except PlacementFailure as e:
            logger.warning("Skipping placement of %s: %s", item.id, e)
            continue
        existing.append(box)
        drawn.append((item, mesh, sample, pose, box))

    out = image.copy()
    placements: List[Placement] = []
    for item, mesh, sample, pose, box in sorted(drawn, key=lambda d: -d[3].t[2]):
        out, mask = rasterize(mesh, pose, out, return_mask=True)
        record = box3d_to_record(
            box, out.intrinsics, class_name=config.class_name, image_size=(out.width, out.height), occlusion=0
        )
        placements.append(Placement(item.id, sample, pose, box, record, mask))
    return AugmentedFrame(out, list(labels) + [p.record for p in placements], placements)


def flip_frame_horizontal(
    image: SceneImage, labels: Sequence[DetectionRecord]
) -> Tuple[SceneImage, List[DetectionRecord]]:
    """Mirror image, principal point and labels about the vertical image centre line."""
    K = image.intrinsics
    right_edge = image.width - 1.0
    flipped_K = CameraIntrinsics(fx=K.fx, fy=K.fy, cx=right_edge - K.cx, cy=K.cy)
    depth = None if image.depth is None else image.depth[:, ::-1].copy()
    flipped = SceneImage(image.rgb[:, ::-1].copy(), flipped_K, depth)

    out: List[DetectionRecord] = []
    for rec in labels:
        left, top, right, bottom = rec.bbox2d
        update = {"bbox2d": (right_edge - right, top, right_edge - left, bottom)}
        if not rec.is_dontcare:
            x, y, z = rec.location
            update.update(
                location=(-x, y, z),
                rotation_y=wrap_angle(-rec.rotation_y),
                alpha=wrap_angle(-rec.alpha),
            )
        out.append(rec.model_copy(update=update))
    return flipped, out


def fill_ignore_regions(
    image: SceneImage, rects: Sequence[Tuple[float, float, float, float]], rng: np.random.Generator
) -> SceneImage:
    """Uniform noise over each (left, top, right, bottom) rectangle, clipped to the image."""
    out = image.copy()
    for left, top, right, bottom in rects:
        x0, y0 = max(int(math.floor(left)), 0), max(int(math.floor(top)), 0)
        x1, y1 = min(int(math.ceil(right)), out.width - 1), min(int(math.ceil(bottom)), out.height - 1)
        if x1 < x0 or y1 < y0:
            continue
        out.rgb[y0 : y1 + 1, x0 : x1 + 1] = rng.integers(0, 256, size=(y1 - y0 + 1, x1 - x0 + 1, 3), dtype=np.uint8)
    return out


def load_mesh_bank(directory: Path) -> List[MeshBankItem]:
    directory = Path(directory)
    index = MeshBankIndex.model_validate(orjson.loads((directory / MESH_BANK_INDEX).read_bytes()))
    bank: List[MeshBankItem] = []
    for entry in index.meshes:
        vertices, triangles, colors = read_mesh(directory / f"{entry.id}.ply")
        mesh = _centered(TriMesh(vertices, triangles, colors))
        if not np.allclose(mesh.extents, entry.extents, rtol=0.05):
            logger.warning("Mesh %s bounds %s differ from metadata extents %s", entry.id, mesh.extents, entry.extents)
        allo = Quaternion.from_array(entry.allocentric).normalized() if entry.allocentric else None
        bank.append(MeshBankItem(entry.id, mesh, entry.class_tag, allo))
    logger.info("Loaded %d meshes from %s", len(bank), directory)
    return bank
