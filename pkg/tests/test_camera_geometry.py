import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.core.camera_geometry import (
    CameraIntrinsics,
    LiftParams,
    Pose,
    Quaternion,
    allo_to_ego,
    alpha_from_rotation_y,
    backproject,
    ego_to_allo,
    instantiate_box,
    lift,
    params_from_box,
    project,
    project_box,
    recover_pose,
    resolve_extents,
    rotation_y_from_alpha,
    view_rotation,
    wrap_angle,
)
from src.core.errors import GeometryDomainError


def random_quaternion(rng) -> Quaternion:
    q = rng.normal(size=4)
    return Quaternion.from_array(q / np.linalg.norm(q))


# =========================================================
# Camera
# =========================================================

def test_project_inverts_backproject(K, rng):
    for _ in range(100):
        u, v, z = rng.uniform(0, 1242), rng.uniform(0, 375), rng.uniform(0.5, 80)
        np.testing.assert_allclose(project(K, backproject(K, u, v, z)), [u, v], atol=1e-9)


def test_backproject_matches_inverse_matrix(K, rng):
    for _ in range(50):
        u, v, z = rng.uniform(0, 1242), rng.uniform(0, 375), rng.uniform(0.5, 80)
        expected = z * np.linalg.inv(K.matrix) @ np.array([u, v, 1.0])
        np.testing.assert_allclose(backproject(K, u, v, z), expected, atol=1e-9)
    np.testing.assert_allclose(K.inverse, np.linalg.inv(K.matrix), atol=1e-15)


def test_principal_point_backprojects_onto_optical_axis(K):
    np.testing.assert_allclose(backproject(K, K.cx, K.cy, 10.0), [0.0, 0.0, 10.0], atol=1e-12)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_backproject_rejects_non_positive_depth(K, z):
    with pytest.raises(GeometryDomainError):
        backproject(K, 10.0, 10.0, z)


def test_project_rejects_points_behind_camera(K):
    with pytest.raises(GeometryDomainError):
        project(K, np.array([[0.0, 0.0, -1.0]]))


def test_intrinsics_need_positive_focal_lengths():
    with pytest.raises(GeometryDomainError):
        CameraIntrinsics(fx=0.0, fy=700.0, cx=600.0, cy=180.0)


def test_intrinsics_from_kitti_projection(K):
    p2 = np.array([721.5377, 0.0, 609.5593, 44.85728, 0.0, 721.5377, 172.854, 0.2163791, 0.0, 0.0, 1.0, 0.002745884])
    assert CameraIntrinsics.from_projection(p2) == K


# =========================================================
# Quaternions
# =========================================================

def test_normalized_quaternion_is_unit(rng):
    for _ in range(100):
        q = Quaternion.from_array(rng.normal(size=4) * rng.uniform(0.1, 10))
        assert abs(q.normalized().norm - 1.0) < 1e-9


def test_zero_quaternion_cannot_be_normalized():
    with pytest.raises(GeometryDomainError):
        Quaternion(0.0, 0.0, 0.0, 0.0).normalized()


def test_rotation_preserves_length_and_matches_scipy(rng):
    for _ in range(50):
        q = random_quaternion(rng)
        v = rng.normal(size=3)
        rotated = q.rotate(v)
        assert abs(np.linalg.norm(rotated) - np.linalg.norm(v)) < 1e-9
        oracle = Rotation.from_quat([q.x, q.y, q.z, q.w]).apply(v)
        np.testing.assert_allclose(rotated, oracle, atol=1e-9)


def test_antipodal_quaternions_give_same_matrix(rng):
    q = random_quaternion(rng)
    np.testing.assert_allclose(q.to_matrix(), (-q).to_matrix(), atol=1e-12)


def test_quaternion_product_composes_rotations(rng):
    a, b = random_quaternion(rng), random_quaternion(rng)
    np.testing.assert_allclose((a * b).to_matrix(), a.to_matrix() @ b.to_matrix(), atol=1e-9)


def test_about_y_matches_kitti_yaw():
    m = Quaternion.about_y(0.3).to_matrix()
    expected = np.array([[math.cos(0.3), 0, math.sin(0.3)], [0, 1, 0], [-math.sin(0.3), 0, math.cos(0.3)]])
    np.testing.assert_allclose(m, expected, atol=1e-12)


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.25) == pytest.approx(0.25)


# =========================================================
# Boxes
# =========================================================

def test_opposite_corner_midpoints_meet_at_centroid(rng):
    box = instantiate_box(random_quaternion(rng), rng.normal(size=3) + [0, 0, 20], 1.6, 1.5, 3.9)
    for i in range(4):
        np.testing.assert_allclose((box.corners[i] + box.corners[7 - i]) / 2.0, box.centroid, atol=1e-9)


def test_recover_then_instantiate_is_identity(rng):
    for _ in range(50):
        q = random_quaternion(rng)
        t = rng.uniform(-10, 10, size=3) + [0, 0, 30]
        box = instantiate_box(q, t, *rng.uniform(0.5, 5.0, size=3))
        q2, t2, w, h, l = recover_pose(box)
        np.testing.assert_allclose(instantiate_box(q2, t2, w, h, l).corners, box.corners, atol=1e-9)


def test_box_extents_and_yaw(rng):
    box = instantiate_box(Quaternion.about_y(0.4), [1.0, 1.0, 20.0], 1.6, 1.5, 3.9)
    np.testing.assert_allclose(box.extents, [1.6, 1.5, 3.9], atol=1e-12)
    assert box.yaw == pytest.approx(0.4)


def test_instantiate_box_rejects_zero_extent():
    with pytest.raises(GeometryDomainError):
        instantiate_box(Quaternion.identity(), [0, 0, 10], 1.0, 0.0, 2.0)


# =========================================================
# Lifting
# =========================================================

def test_lift_at_principal_point_with_zero_deviation(K, car_stats):
    params = LiftParams(q_allo=Quaternion.identity(), u=K.cx, v=K.cy, z=10.0)
    box = lift(params, car_stats, K)
    np.testing.assert_allclose(box.centroid, [0.0, 0.0, 10.0], atol=1e-9)
    np.testing.assert_allclose(box.extents, car_stats.mean, atol=1e-9)


def test_lift_resolves_deviations_in_std_units(K, car_stats):
    params = LiftParams(q_allo=Quaternion.identity(), u=K.cx, v=K.cy, z=10.0, dw=1.0, dh=-1.0, dl=2.0)
    expected = car_stats.mean + np.array([1.0, -1.0, 2.0]) * car_stats.std
    np.testing.assert_allclose(lift(params, car_stats, K).extents, expected, atol=1e-9)


def test_degenerate_extents_rejected(K, car_stats):
    params = LiftParams(q_allo=Quaternion.identity(), u=K.cx, v=K.cy, z=10.0, dh=-50.0)
    with pytest.raises(GeometryDomainError):
        resolve_extents(params, car_stats)


def test_lift_params_validate_depth_and_latent():
    with pytest.raises(GeometryDomainError):
        LiftParams(q_allo=Quaternion.identity(), u=0.0, v=0.0, z=0.0)
    with pytest.raises(GeometryDomainError):
        LiftParams(q_allo=Quaternion.identity(), u=0.0, v=0.0, z=5.0, s=np.ones(6))


def test_params_from_box_lifts_back(K, car_stats, rng):
    for _ in range(20):
        q = Quaternion.about_y(rng.uniform(-math.pi, math.pi))
        box = instantiate_box(q, [rng.uniform(-8, 8), 1.0, rng.uniform(8, 50)], 1.7, 1.4, 4.1)
        params = params_from_box(box, car_stats, K)
        np.testing.assert_allclose(lift(params, car_stats, K).corners, box.corners, atol=1e-9)


def test_lift_ignores_quaternion_sign(K, car_stats, rng):
    for _ in range(20):
        q = random_quaternion(rng)
        params = LiftParams(q_allo=q, u=rng.uniform(100, 1100), v=rng.uniform(50, 300), z=rng.uniform(5, 60), dl=0.4)
        flipped = LiftParams(q_allo=Quaternion.from_array(-q.as_array()), u=params.u, v=params.v, z=params.z, dl=0.4)
        np.testing.assert_allclose(lift(flipped, car_stats, K).corners, lift(params, car_stats, K).corners, atol=1e-12)


def test_lift_is_equivariant_in_depth(K, car_stats, rng):
    q = random_quaternion(rng)
    near = lift(LiftParams(q_allo=q, u=850.0, v=140.0, z=10.0, dw=-0.3), car_stats, K)
    for scale in (0.5, 2.0, 4.5):
        far = lift(LiftParams(q_allo=q, u=850.0, v=140.0, z=10.0 * scale, dw=-0.3), car_stats, K)
        np.testing.assert_allclose(far.centroid, scale * near.centroid, atol=1e-9)
        np.testing.assert_allclose(far.corners - far.centroid, near.corners - near.centroid, atol=1e-9)


def test_lift_params_vector_round_trip():
    params = LiftParams(q_allo=Quaternion.about_y(0.2), u=300.0, v=150.0, z=12.0, dw=0.1, dh=-0.2, dl=0.3)
    assert LiftParams.from_vector(params.to_vector()).to_vector().tolist() == params.to_vector().tolist()


# =========================================================
# Allocentric / egocentric
# =========================================================

def test_view_rotation_maps_optical_axis_to_ray(rng):
    for _ in range(50):
        ray = rng.normal(size=3)
        ray[2] = abs(ray[2]) + 0.1
        ray /= np.linalg.norm(ray)
        np.testing.assert_allclose(view_rotation(ray).rotate([0.0, 0.0, 1.0]), ray, atol=1e-9)


def test_view_rotation_on_optical_axis_is_identity():
    np.testing.assert_allclose(view_rotation([0.0, 0.0, 1.0]).to_matrix(), np.eye(3), atol=1e-12)


def test_antiparallel_ray_rejected():
    with pytest.raises(GeometryDomainError):
        view_rotation([0.0, 0.0, -1.0])


def test_allo_ego_round_trip(rng):
    for _ in range(50):
        q = random_quaternion(rng)
        ray = np.array([rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), 1.0])
        back = allo_to_ego(ego_to_allo(q, ray), ray)
        np.testing.assert_allclose(abs(back.as_array() @ q.as_array()), 1.0, atol=1e-9)


def test_allocentric_box_looks_the_same_along_any_ray(K, car_stats):
    """Corner offsets in a ray-aligned frame do not depend on where the box sits."""
    q_allo = Quaternion.about_y(0.7)
    offsets = []
    for u, v in [(K.cx, K.cy), (100.0, 50.0), (1100.0, 300.0)]:
        params = LiftParams(q_allo=q_allo, u=u, v=v, z=20.0)
        box = lift(params, car_stats, K)
        view = view_rotation(box.centroid).to_matrix()
        offsets.append((box.corners - box.centroid) @ view)
    for other in offsets[1:]:
        np.testing.assert_allclose(other, offsets[0], atol=1e-9)


def test_egocentric_yaw_changes_with_ray(K, car_stats):
    q_allo = Quaternion.identity()
    left = lift(LiftParams(q_allo=q_allo, u=100.0, v=K.cy, z=20.0), car_stats, K)
    right = lift(LiftParams(q_allo=q_allo, u=1100.0, v=K.cy, z=20.0), car_stats, K)
    assert left.yaw < 0 < right.yaw


# =========================================================
# KITTI angles and 2D boxes
# =========================================================

def test_alpha_round_trip(rng):
    for _ in range(100):
        loc = [rng.uniform(-20, 20), 1.5, rng.uniform(1, 80)]
        ry = rng.uniform(-math.pi, math.pi)
        back = rotation_y_from_alpha(alpha_from_rotation_y(ry, loc), loc)
        assert abs(wrap_angle(back - ry)) < 1e-12


def test_alpha_equals_yaw_on_optical_axis():
    assert alpha_from_rotation_y(0.5, [0.0, 1.5, 20.0]) == pytest.approx(0.5)


def test_alpha_needs_object_in_front():
    with pytest.raises(GeometryDomainError):
        alpha_from_rotation_y(0.0, [0.0, 0.0, -2.0])


def test_project_box_is_tight_around_corners(K):
    box = instantiate_box(Quaternion.about_y(0.3), [2.0, 1.0, 15.0], 1.6, 1.5, 3.9)
    left, top, right, bottom = project_box(box, K)
    uv = project(K, box.corners)
    assert left == pytest.approx(uv[:, 0].min()) and right == pytest.approx(uv[:, 0].max())
    assert top == pytest.approx(uv[:, 1].min()) and bottom == pytest.approx(uv[:, 1].max())


def test_project_box_rejects_box_through_camera(K):
    box = instantiate_box(Quaternion.identity(), [0.0, 0.0, 1.0], 1.6, 1.5, 3.9)
    with pytest.raises(GeometryDomainError):
        project_box(box, K)


def test_pose_transform_applies_rotation_then_translation():
    pose = Pose(Quaternion.about_y(math.pi / 2), [1.0, 0.0, 10.0])
    np.testing.assert_allclose(pose.transform(np.array([[0.0, 0.0, 1.0]])), [[2.0, 0.0, 10.0]], atol=1e-12)
