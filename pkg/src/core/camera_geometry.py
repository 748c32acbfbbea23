"""
camera_geometry.py
Pinhole camera math, quaternions and the 10D lifting map.

Camera frame follows KITTI: x right, y down, z forward.
Object frame: x spans the width, y the height, z the length.

Corner order over (w, h, l) / 2 is fixed for every Box3D:
    0 (+,+,+)  1 (+,+,-)  2 (+,-,+)  3 (+,-,-)
    4 (-,+,+)  5 (-,+,-)  6 (-,-,+)  7 (-,-,-)
so corner i and corner 7 - i are opposite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from src.core.errors import GeometryDomainError
from src.core.tools import quaternion as qt

Rect = Tuple[float, float, float, float]

CORNER_SIGNS = np.array(
    [
        [+1, +1, +1],
        [+1, +1, -1],
        [+1, -1, +1],
        [+1, -1, -1],
        [-1, +1, +1],
        [-1, +1, -1],
        [-1, -1, +1],
        [-1, -1, -1],
    ],
    dtype=float,
)

LATENT_DIM = 6
UNIT_TOL = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(float(angle), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


# ==========================
# Camera
# ==========================

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryDomainError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def from_projection(cls, p: np.ndarray) -> "CameraIntrinsics":
        p = np.asarray(p, dtype=float).reshape(3, 4)
        if abs(p[2, 2]) < 1e-12:
            raise GeometryDomainError("Projection matrix has P[2][2] = 0")
        p = p / p[2, 2]
        return cls(fx=float(p[0, 0]), fy=float(p[1, 1]), cx=float(p[0, 2]), cy=float(p[1, 2]))


def backproject(K: CameraIntrinsics, u: float, v: float, z: float) -> np.ndarray:
    if not z > 0:
        raise GeometryDomainError(f"Depth must be positive, got {z}")
    return np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, float(z)])


def project(K: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Project (..., 3) camera points to (..., 2) pixels."""
    pts = np.asarray(points, dtype=float)
    z = pts[..., 2]
    if np.any(z <= 0):
        raise GeometryDomainError("Cannot project points at or behind the camera")
    u = K.fx * pts[..., 0] / z + K.cx
    v = K.fy * pts[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def ray_through(K: CameraIntrinsics, u: float, v: float) -> np.ndarray:
    d = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    return d / np.linalg.norm(d)


# ==========================
# Quaternion
# ==========================

@dataclass(frozen=True)
class Quaternion:
    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q) -> "Quaternion":
        w, x, y, z = (float(c) for c in q)
        return cls(w, x, y, z)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Quaternion":
        return cls.from_array(qt.quat_from_matrix(m))

    @classmethod
    def about_y(cls, angle: float) -> "Quaternion":
        return cls.from_array(qt.quat_about_y(angle))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        try:
            return Quaternion.from_array(qt.quat_normalize(self.as_array()))
        except ValueError as e:
            raise GeometryDomainError(str(e)) from e

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        return Quaternion.from_array(qt.quat_multiply(self.as_array(), other.as_array()))

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        return qt.quat_to_matrix(self.normalized().as_array())

    def rotate(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.to_matrix().T


def normalize(q: Quaternion) -> Quaternion:
    return q.normalized()


def rotate(q: Quaternion, v: np.ndarray) -> np.ndarray:
    return q.rotate(v)


@dataclass(frozen=True)
class Pose:
    """Egocentric 6D pose: rotation then translation, object to camera."""

    q: Quaternion
    t: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.q.to_matrix().T + self.t


# ==========================
# Lifting parameters
# ==========================

@dataclass(frozen=True)
class ExtentStats:
    mean_w: float
    mean_h: float
    mean_l: float
    std_w: float
    std_h: float
    std_l: float

    def __post_init__(self) -> None:
        if min(self.std_w, self.std_h, self.std_l) <= 0:
            raise GeometryDomainError("Degenerate extent stats: every std must be > 0")

    @property
    def mean(self) -> np.ndarray:
        return np.array([self.mean_w, self.mean_h, self.mean_l])

    @property
    def std(self) -> np.ndarray:
        return np.array([self.std_w, self.std_h, self.std_l])

    def deviations(self, w: float, h: float, l: float) -> np.ndarray:
        return (np.array([w, h, l]) - self.mean) / self.std


def _default_latent() -> np.ndarray:
    s = np.zeros(LATENT_DIM)
    s[0] = 1.0
    return s


@dataclass(frozen=True)
class LiftParams:
    q_allo: Quaternion
    u: float
    v: float
    z: float
    dw: float = 0.0
    dh: float = 0.0
    dl: float = 0.0
    s: np.ndarray = field(default_factory=_default_latent)

    def __post_init__(self) -> None:
        if not self.z > 0:
            raise GeometryDomainError(f"Depth must be positive, got {self.z}")
        s = np.asarray(self.s, dtype=float).reshape(-1)
        if abs(np.linalg.norm(s) - 1.0) > UNIT_TOL:
            raise GeometryDomainError("Latent shape code must be unit norm")
        object.__setattr__(self, "s", s)

    @property
    def deviations(self) -> np.ndarray:
        return np.array([self.dw, self.dh, self.dl])

    def to_vector(self) -> np.ndarray:
        """(qw, qx, qy, qz, u, v, z, dw, dh, dl)."""
        return np.concatenate([self.q_allo.as_array(), [self.u, self.v, self.z], self.deviations])

    @classmethod
    def from_vector(cls, x: np.ndarray, s: Optional[np.ndarray] = None) -> "LiftParams":
        x = np.asarray(x, dtype=float)
        kwargs = {} if s is None else {"s": s}
        return cls(
            q_allo=Quaternion.from_array(x[:4]),
            u=float(x[4]),
            v=float(x[5]),
            z=float(x[6]),
            dw=float(x[7]),
            dh=float(x[8]),
            dl=float(x[9]),
            **kwargs,
        )


# ==========================
# Box3D
# ==========================

@dataclass(frozen=True)
class Box3D:
    corners: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.corners, dtype=float)
        if c.shape != (8, 3):
            raise GeometryDomainError(f"Box3D needs (8, 3) corners, got {c.shape}")
        object.__setattr__(self, "corners", c)

    @property
    def centroid(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    @property
    def extents(self) -> np.ndarray:
        """(w, h, l) from the edges leaving corner 0."""
        c = self.corners
        return np.array(
            [np.linalg.norm(c[0] - c[4]), np.linalg.norm(c[0] - c[2]), np.linalg.norm(c[0] - c[1])]
        )

    @property
    def yaw(self) -> float:
        """Heading of the length axis in the x-z plane, KITTI rotation_y sense."""
        axis = self.corners[0] - self.corners[1]
        return float(math.atan2(axis[0], axis[2]))

    def translated(self, offset) -> "Box3D":
        return Box3D(self.corners + np.asarray(offset, dtype=float))


def instantiate_box(q_ego: Quaternion, t: np.ndarray, w: float, h: float, l: float) -> Box3D:
    if min(w, h, l) <= 0:
        raise GeometryDomainError(f"Extents must be positive, got w={w}, h={h}, l={l}")
    offsets = CORNER_SIGNS * (np.array([w, h, l]) / 2.0)
    return Box3D(offsets @ q_ego.to_matrix().T + np.asarray(t, dtype=float))


def recover_pose(box: Box3D) -> Tuple[Quaternion, np.ndarray, float, float, float]:
    """Inverse of instantiate_box: (q_ego, t, w, h, l) from ordered corners."""
    c = box.corners
    axes = np.stack([c[0] - c[4], c[0] - c[2], c[0] - c[1]], axis=1)
    w, h, l = np.linalg.norm(axes, axis=0)
    if min(w, h, l) <= 0:
        raise GeometryDomainError("Box has a zero-length edge")
    u_, _, vt = np.linalg.svd(axes / np.array([w, h, l]))
    rot = u_ @ vt
    if np.linalg.det(rot) < 0:
        raise GeometryDomainError("Corner ordering is not orientation-preserving")
    return Quaternion.from_matrix(rot), box.centroid, float(w), float(h), float(l)


# ==========================
# Allocentric / egocentric
# ==========================

def _unit_ray(ray) -> np.ndarray:
    r = np.asarray(ray, dtype=float).reshape(3)
    n = np.linalg.norm(r)
    if n <= 0:
        raise GeometryDomainError("Zero-length ray")
    return r / n


def view_rotation(ray) -> Quaternion:
    try:
        return Quaternion.from_array(qt.view_quaternion(_unit_ray(ray)))
    except ValueError as e:
        raise GeometryDomainError(str(e)) from e


def allo_to_ego(q_allo: Quaternion, ray) -> Quaternion:
    return view_rotation(ray) * q_allo


def ego_to_allo(q_ego: Quaternion, ray) -> Quaternion:
    return view_rotation(ray).conjugate() * q_ego


def resolve_extents(params: LiftParams, stats: ExtentStats) -> np.ndarray:
    extents = stats.mean + params.deviations * stats.std
    if np.any(extents <= 0):
        raise GeometryDomainError(f"Degenerate extents after deviation resolution: {extents}")
    return extents


def lift(params: LiftParams, stats: ExtentStats, K: CameraIntrinsics) -> Box3D:
    t = backproject(K, params.u, params.v, params.z)
    q_ego = allo_to_ego(params.q_allo.normalized(), t)
    w, h, l = resolve_extents(params, stats)
    return instantiate_box(q_ego, t, w, h, l)


def params_from_box(
    box: Box3D,
    stats: ExtentStats,
    K: CameraIntrinsics,
    s: Optional[np.ndarray] = None,
) -> LiftParams:
    """LiftParams that lift back onto ``box`` (its centroid projected to (u, v))."""
    q_ego, t, w, h, l = recover_pose(box)
    (u, v), z = project(K, t), float(t[2])
    dw, dh, dl = stats.deviations(w, h, l)
    kwargs = {} if s is None else {"s": s}
    return LiftParams(
        q_allo=ego_to_allo(q_ego, t), u=float(u), v=float(v), z=z,
        dw=float(dw), dh=float(dh), dl=float(dl), **kwargs,
    )


# ==========================
# KITTI angle bridge
# ==========================

def alpha_from_rotation_y(ry: float, location) -> float:
    x, _, z = (float(c) for c in location)
    if not z > 0:
        raise GeometryDomainError("Location must be in front of the camera")
    return wrap_angle(ry - math.atan2(x, z))


def rotation_y_from_alpha(alpha: float, location) -> float:
    x, _, z = (float(c) for c in location)
    if not z > 0:
        raise GeometryDomainError("Location must be in front of the camera")
    return wrap_angle(alpha + math.atan2(x, z))


def project_box(box: Box3D, K: CameraIntrinsics) -> Rect:
    uv = project(K, box.corners)
    left, top = uv.min(axis=0)
    right, bottom = uv.max(axis=0)
    return float(left), float(top), float(right), float(bottom)
