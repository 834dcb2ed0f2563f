# tests/test_geometry.py
import math

import numpy as np
import pytest

from engines.geometry import (
    box_corners,
    box_footprint,
    compose,
    fit_rigid_least_squares,
    invert,
    look_at,
    points_in_box,
    project,
    random_rotation,
    reorthonormalize,
    rotation_about_y,
    unproject,
    unproject_depth,
    yaw_from_rotation,
)
from models.data_models import Box3D, CameraIntrinsics, RigidTransform
from models.errors import DegenerateConfiguration, NonPositiveDepth, NumericError


def random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.uniform(-5, 5, 3))


def test_compose_with_inverse_is_identity():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = random_transform(rng)
        both = compose(t, invert(t))
        assert np.allclose(both.matrix(), np.eye(4), atol=1e-9)


def test_compose_matches_matrix_product():
    rng = np.random.default_rng(1)
    a, b = random_transform(rng), random_transform(rng)
    assert np.allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-9)


def test_reorthonormalize_leaves_clean_rotation_untouched():
    r = rotation_about_y(0.3)
    assert reorthonormalize(r) is r
    drifted = r + 1e-5
    fixed = reorthonormalize(drifted)
    assert np.allclose(fixed.T @ fixed, np.eye(3), atol=1e-12)


def test_rigid_transform_rejects_reflection():
    with pytest.raises(NumericError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_rigid_transform_rejects_rotation_drift_above_1e_9():
    r = rotation_about_y(0.3)
    RigidTransform(r + 1e-11, np.zeros(3))
    with pytest.raises(NumericError):
        RigidTransform(r + 1e-7, np.zeros(3))


def test_thousand_compositions_stay_orthonormal():
    rng = np.random.default_rng(7)
    step = RigidTransform(random_rotation(rng), rng.uniform(-0.1, 0.1, 3))
    total = RigidTransform.identity()
    for _ in range(1000):
        total = compose(step, total)
    r = total.rotation
    assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9


def test_project_unproject_roundtrip():
    k = CameraIntrinsics.from_fov(64, 48, 60.0)
    u, v, z = project(k, [0.4, -0.2, 3.0])
    assert np.allclose(unproject(k, u, v, z), [0.4, -0.2, 3.0])


def test_project_rejects_points_behind_camera():
    k = CameraIntrinsics.from_fov(8, 8, 60.0)
    with pytest.raises(NonPositiveDepth):
        project(k, [0.0, 0.0, 0.0])
    with pytest.raises(NonPositiveDepth):
        unproject(k, 1.0, 1.0, -1.0)


def test_unproject_depth_skips_empty_pixels():
    k = CameraIntrinsics.from_fov(4, 3, 60.0)
    depth = np.zeros((3, 4))
    depth[1, 2] = 2.0
    points, pixels = unproject_depth(k, depth)
    assert points.shape == (1, 3)
    assert tuple(pixels[0]) == (1, 2)
    assert np.isclose(points[0, 2], 2.0)


def test_look_at_points_camera_z_at_target():
    pose = look_at([0.0, 5.0, -10.0], [0.0, 0.0, 0.0])
    forward = pose.rotation[:, 2]
    expected = -np.array([0.0, 5.0, -10.0]) / np.linalg.norm([0.0, 5.0, -10.0])
    assert np.allclose(forward, expected)
    # image v grows downward in the world
    assert pose.rotation[1, 1] < 0


def test_fit_rigid_recovers_transform():
    rng = np.random.default_rng(2)
    truth = random_transform(rng)
    src = rng.normal(size=(30, 3))
    fitted = fit_rigid_least_squares(src, truth.apply(src))
    assert np.allclose(fitted.rotation, truth.rotation, atol=1e-9)
    assert np.allclose(fitted.translation, truth.translation, atol=1e-9)


def test_fit_rigid_rejects_collinear_points():
    src = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfiguration):
        fit_rigid_least_squares(src, src)
    with pytest.raises(DegenerateConfiguration):
        fit_rigid_least_squares(src[:2], src[:2])


def test_yaw_roundtrip_through_rotation():
    for yaw in (-3.0, -0.5, 0.0, 1.2, 3.1):
        assert math.isclose(yaw_from_rotation(rotation_about_y(yaw)), yaw, abs_tol=1e-12)


def test_box_footprint_area_and_orientation():
    box = Box3D(np.array([1.0, 0.5, -2.0]), np.array([4.0, 1.0, 2.0]), 0.7)
    corners = box_footprint(box)
    x, z = corners[:, 0], corners[:, 1]
    area = 0.5 * np.sum(x * np.roll(z, -1) - np.roll(x, -1) * z)
    assert area == pytest.approx(8.0)
    assert np.allclose(corners.mean(axis=0), [1.0, -2.0])


def test_box_corners_are_inside_box():
    box = Box3D(np.array([0.0, 1.0, 0.0]), np.array([2.0, 2.0, 1.0]), 0.4)
    corners = box_corners(box)
    assert corners.shape == (8, 3)
    assert points_in_box(box, corners, margin=1e-9).all()
    assert not points_in_box(box, corners * 1.5 + [0, 0.5, 0]).any()
