"""
quaternion.py
Array-level quaternion helpers, scalar-first (w, x, y, z).

The rotation-matrix polynomial and its partial derivatives are written out
explicitly because the corner-loss gradient needs them; conversions from
matrices and rotation vectors go through scipy.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

OPTICAL_AXIS = np.array([0.0, 0.0, 1.0])
ANTIPARALLEL_EPS = 1e-12


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n <= 0.0 or not np.isfinite(n):
        raise ValueError("Cannot normalize a zero quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion; even in q, so q and -q agree."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_matrix_partials(q: np.ndarray) -> np.ndarray:
    """d R / d q_j for j = w, x, y, z, stacked as (4, 3, 3)."""
    w, x, y, z = q
    return 2.0 * np.array(
        [
            [[0, -z, y], [z, 0, -x], [-y, x, 0]],
            [[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]],
            [[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]],
            [[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]],
        ],
        dtype=float,
    )


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(np.asarray(m, dtype=float)).as_quat()
    q = np.array([w, x, y, z])
    return q if q[0] >= 0 else -q


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_quat()
    return np.array([w, x, y, z])


def quat_about_y(angle: float) -> np.ndarray:
    return np.array([np.cos(angle / 2.0), 0.0, np.sin(angle / 2.0), 0.0])


# ==========================
# Minimal view rotation
# ==========================

def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def view_quaternion(ray: np.ndarray) -> np.ndarray:
    """Minimal rotation taking the optical axis onto ``ray`` (unit)."""
    c = float(ray[2])
    if c <= -1.0 + ANTIPARALLEL_EPS:
        raise ValueError("Ray is antiparallel to the optical axis")
    return quat_normalize(np.array([1.0 + c, -ray[1], ray[0], 0.0]))


def view_matrix(ray: np.ndarray) -> np.ndarray:
    c = float(ray[2])
    if c <= -1.0 + ANTIPARALLEL_EPS:
        raise ValueError("Ray is antiparallel to the optical axis")
    vx = _skew(np.array([-ray[1], ray[0], 0.0]))
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def view_matrix_partials(ray: np.ndarray) -> np.ndarray:
    """d R_view / d r_j for the ray components j = x, y, z, stacked as (3, 3, 3).

    Components are treated as independent; chain through the ray
    normalisation separately.
    """
    c = float(ray[2])
    vx = _skew(np.array([-ray[1], ray[0], 0.0]))
    inv = 1.0 / (1.0 + c)
    d_vx = (_skew(np.array([0.0, 1.0, 0.0])), _skew(np.array([-1.0, 0.0, 0.0])))
    out = np.zeros((3, 3, 3))
    for j, dv in enumerate(d_vx):
        out[j] = dv + (dv @ vx + vx @ dv) * inv
    out[2] = -(vx @ vx) * inv * inv
    return out
