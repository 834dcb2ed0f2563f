"""
SE(3) transforms, pinhole camera model and rigid least-squares fitting.

Conventions: right-handed; cameras look down +z with image v growing along
camera +y; world y is the vertical axis; yaw is a rotation about world y.
"""

import math
from typing import Tuple

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from models.data_models import Box3D, CameraIntrinsics, RigidTransform
from models.errors import DegenerateConfiguration, NonPositiveDepth, ShapeMismatch

REORTHO_TOL = 1e-10
COLLINEAR_TOL = 1e-9


def reorthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation via polar decomposition, applied only once drift exceeds 1e-10"""
    drift = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if drift <= REORTHO_TOL:
        return rotation
    u, _ = polar(rotation)
    return u


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a ∘ b: apply b first, then a"""
    rotation = reorthonormalize(a.rotation @ b.rotation)
    return RigidTransform(rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def rotation_about_y(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_from_rotation(rotation: np.ndarray) -> float:
    """Vertical-axis component of a rotation; roll and pitch are discarded"""
    return math.atan2(rotation[0, 2], rotation[2, 2])


def yaw_transform(yaw: float, translation) -> RigidTransform:
    return RigidTransform(rotation_about_y(yaw), np.asarray(translation, dtype=np.float64))


def rotation_angle(rotation: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, radians"""
    cos = (np.trace(rotation) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos)))


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World-from-camera pose of a camera at `eye` looking at `target`"""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise DegenerateConfiguration("look_at target coincides with eye")
    forward /= norm
    up = np.asarray(up, dtype=np.float64)
    if abs(forward @ up) > 0.999:
        up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return RigidTransform(np.stack([right, down, forward], axis=1), eye)


def project(k: CameraIntrinsics, p_cam) -> Tuple[float, float, float]:
    x, y, z = (float(c) for c in p_cam)
    if not z > 0:
        raise NonPositiveDepth(f"cannot project point with depth {z}")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy, z


def unproject(k: CameraIntrinsics, u: float, v: float, depth: float) -> np.ndarray:
    if not depth > 0:
        raise NonPositiveDepth(f"cannot unproject pixel with depth {depth}")
    return np.array([(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth])


def project_points(k: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Vectorized project over (N, 3) camera-frame points; returns (N, 3) of (u, v, depth)"""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("cannot project points with non-positive depth")
    return np.stack([k.fx * p[:, 0] / z + k.cx, k.fy * p[:, 1] / z + k.cy, z], axis=1)


def unproject_depth(k: CameraIntrinsics, depth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Camera-frame points of every valid pixel of a depth map.

    Returns (points (N, 3), pixel indices (N, 2) as (row, col)). Pixel (row, col)
    sits at u = col, v = row. Invalid pixels carry depth 0 and are skipped.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (k.height, k.width):
        raise ShapeMismatch(f"depth map {depth.shape} does not match intrinsics {(k.height, k.width)}")
    rows, cols = np.nonzero(depth > 0)
    z = depth[rows, cols]
    points = np.stack([(cols - k.cx) * z / k.fx, (rows - k.cy) * z / k.fy, z], axis=1)
    return points, np.stack([rows, cols], axis=1)


def fit_rigid_least_squares(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Kabsch/Procrustes fit minimizing sum ||T src_i - dst_i||^2"""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ShapeMismatch(f"point sets must be matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    if src.shape[0] < 3:
        raise DegenerateConfiguration(f"need at least 3 correspondences, got {src.shape[0]}")

    centroid_src = src.mean(axis=0)
    centroid_dst = dst.mean(axis=0)
    a = src - centroid_src
    b = dst - centroid_dst

    spread = np.linalg.svd(a, compute_uv=False)
    if spread[1] <= COLLINEAR_TOL * max(spread[0], 1.0):
        raise DegenerateConfiguration("source points are collinear")

    u, _, vt = np.linalg.svd(a.T @ b)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rotation, centroid_dst - rotation @ centroid_src)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def box_footprint(box: Box3D) -> np.ndarray:
    """Bird's-eye (x, z) corners of a yawed box, counter-clockwise in the x-z plane"""
    half_l, half_w = box.dims[0] / 2.0, box.dims[2] / 2.0
    local = np.array([[-half_l, -half_w], [half_l, -half_w], [half_l, half_w], [-half_l, half_w]])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = box.center[0] + c * local[:, 0] + s * local[:, 1]
    z = box.center[2] - s * local[:, 0] + c * local[:, 1]
    corners = np.stack([x, z], axis=1)
    signed = 0.5 * np.sum(corners[:, 0] * np.roll(corners[:, 1], -1) - np.roll(corners[:, 0], -1) * corners[:, 1])
    return corners if signed > 0 else corners[::-1].copy()


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) world corners"""
    half = box.dims / 2.0
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    return yaw_transform(box.yaw, box.center).apply(signs * half)


def points_in_box(box: Box3D, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of (N, 3) world points inside the yawed box grown by margin"""
    local = (np.asarray(points, dtype=np.float64) - box.center) @ rotation_about_y(box.yaw)
    return np.all(np.abs(local) <= box.dims / 2.0 + margin, axis=-1)
