"""
Procedural RGB-D world: textured ground plane, static cuboids and spheres,
rigid cuboid movers with ground-truth trajectories, and a perturbed camera
rig on a hemisphere around the scene. Rendering is a vectorized raycast.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from engines.geometry import box_footprint, compose, look_at, points_in_box, yaw_transform
from engines.voxel_engine import voxel_centers
from models.data_models import (
    Box3D,
    CameraIntrinsics,
    CameraView,
    Episode,
    GridSpec,
    Mover,
    Primitive,
    RigidTransform,
    SceneSpec,
)
from models.errors import DegenerateConfiguration
from models.schemas import EpisodeKind, PrimitiveShape, SimConfig
from utils.logger import get_logger

logger = get_logger(__name__)

HIT_EPS = 1e-9
TEXTURE_CELLS = 16
GROUND_CELL = 1.0
PRIMITIVE_CELL = 0.5


@lru_cache(maxsize=256)
def _texture_table(seed: int) -> np.ndarray:
    table = np.random.default_rng(seed).uniform(0.0, 1.0, size=(TEXTURE_CELLS,) * 3 + (3,))
    table.setflags(write=False)
    return table


def texture_color(seed: int, points: np.ndarray, cell: float, albedo: np.ndarray) -> np.ndarray:
    """Per-cell random colour blended with the albedo; points in the surface's local frame"""
    idx = np.floor(points / cell).astype(np.int64) % TEXTURE_CELLS
    noise = _texture_table(seed)[idx[:, 0], idx[:, 1], idx[:, 2]]
    return 0.5 * albedo + 0.5 * noise


def primitives_at(scene: SceneSpec, frame: int) -> List[Primitive]:
    return list(scene.static_primitives) + [m.primitive.at(m.trajectory[frame]) for m in scene.movers]


def _camera_rays(view: CameraView) -> Tuple[np.ndarray, np.ndarray]:
    """World ray origin and (H*W, 3) directions scaled so the hit parameter equals camera depth"""
    k = view.intrinsics
    rows, cols = np.meshgrid(np.arange(k.height), np.arange(k.width), indexing="ij")
    d_cam = np.stack([(cols.ravel() - k.cx) / k.fx, (rows.ravel() - k.cy) / k.fy, np.ones(rows.size)], axis=1)
    return view.pose.translation, d_cam @ view.pose.rotation.T


def _intersect_ground(origin, dirs, half_size: float) -> np.ndarray:
    t = np.full(len(dirs), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = -origin[1] / dirs[:, 1]
    ok = np.isfinite(cand) & (cand > HIT_EPS)
    hit = origin + cand[:, None] * dirs
    ok &= (np.abs(hit[:, 0]) <= half_size) & (np.abs(hit[:, 2]) <= half_size)
    t[ok] = cand[ok]
    return t


def _intersect_cuboid(origin, dirs, prim: Primitive) -> np.ndarray:
    """Slab test in the cuboid's local frame"""
    r, c = prim.pose.rotation, prim.pose.translation
    o = r.T @ (origin - c)
    d = dirs @ r
    half = prim.size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - o) / d
        t2 = (half - o) / d
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    near = np.minimum(t1, t2).max(axis=1)
    far = np.maximum(t1, t2).min(axis=1)
    ok = (near <= far) & (near > HIT_EPS)
    return np.where(ok, near, np.inf)


def _intersect_sphere(origin, dirs, prim: Primitive) -> np.ndarray:
    radius = prim.size[0] / 2.0
    oc = origin - prim.pose.translation
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * dirs @ oc
    c = oc @ oc - radius * radius
    disc = b * b - 4.0 * a * c
    ok = disc >= 0
    t = np.full(len(dirs), np.inf)
    root = (-b[ok] - np.sqrt(disc[ok])) / (2.0 * a[ok])
    t[ok] = np.where(root > HIT_EPS, root, np.inf)
    return t


def render_view(
    scene: SceneSpec,
    frame: int,
    view: CameraView,
    depth_noise_std: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """RGB (H, W, 3) float32 in [0, 1] and camera-z depth (H, W) float32, 0 where the ray misses"""
    k = view.intrinsics
    origin, dirs = _camera_rays(view)
    prims = primitives_at(scene, frame)

    hits = [_intersect_ground(origin, dirs, scene.ground_half_size)]
    for prim in prims:
        fn = _intersect_cuboid if prim.shape == PrimitiveShape.CUBOID else _intersect_sphere
        hits.append(fn(origin, dirs, prim))
    hits = np.stack(hits)
    nearest = hits.argmin(axis=0)
    t = hits[nearest, np.arange(len(dirs))]
    valid = np.isfinite(t)

    rgb = np.zeros((len(dirs), 3))
    points = origin + np.where(valid, t, 0.0)[:, None] * dirs
    ground = valid & (nearest == 0)
    if ground.any():
        rgb[ground] = texture_color(scene.ground_seed, points[ground], GROUND_CELL, np.full(3, 0.5))
    for n, prim in enumerate(prims, start=1):
        sel = valid & (nearest == n)
        if sel.any():
            local = (points[sel] - prim.pose.translation) @ prim.pose.rotation
            rgb[sel] = texture_color(prim.texture_seed, local, PRIMITIVE_CELL, prim.albedo)

    depth = np.where(valid, t, 0.0)
    if depth_noise_std > 0 and rng is not None:
        noisy = depth + rng.normal(0.0, depth_noise_std, size=depth.shape)
        depth = np.where(valid, np.maximum(noisy, 1e-3), 0.0)
    return (
        np.clip(rgb, 0.0, 1.0).reshape(k.height, k.width, 3).astype(np.float32),
        depth.reshape(k.height, k.width).astype(np.float32),
    )


def build_rig(config: SimConfig, rng: np.random.Generator) -> List[CameraView]:
    """Sample n_cameras of the hemisphere viewpoints around the scene centre and perturb them"""
    intrinsics = CameraIntrinsics.from_fov(config.image_width, config.image_height, config.fov_degrees)
    lo, hi = config.elevation_range_deg
    tiers = 3
    chosen = rng.choice(config.n_viewpoints, size=min(config.n_cameras, config.n_viewpoints), replace=False)
    views = []
    for v in sorted(int(c) for c in chosen):
        azimuth = 2.0 * math.pi * v / config.n_viewpoints + math.radians(rng.normal(0.0, config.yaw_jitter_deg))
        elevation = math.radians(lo + (hi - lo) * (v % tiers) / (tiers - 1) + rng.normal(0.0, config.elevation_jitter_deg))
        radius = config.rig_radius + rng.normal(0.0, config.radius_jitter)
        target = np.array([rng.normal(0.0, config.target_jitter), 0.0, rng.normal(0.0, config.target_jitter)])
        eye = target + radius * np.array(
            [math.cos(elevation) * math.sin(azimuth), math.sin(elevation), math.cos(elevation) * math.cos(azimuth)]
        )
        views.append(CameraView(intrinsics, look_at(eye, target)))
    return views


def _footprint_radius(size: np.ndarray) -> float:
    return 0.5 * math.hypot(size[0], size[2])


def _random_albedo(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(0.15, 0.95, size=3)


def _place_statics(config: SimConfig, rng: np.random.Generator) -> List[Primitive]:
    count = int(rng.integers(config.static_count_range[0], config.static_count_range[1] + 1))
    placed: List[Primitive] = []
    bound = config.scene_half_size
    for _ in range(config.max_attempts):
        if len(placed) == count:
            break
        if rng.random() < 0.7:
            shape = PrimitiveShape.CUBOID
            size = np.array([rng.uniform(1.0, 4.0), rng.uniform(0.5, 3.0), rng.uniform(1.0, 4.0)])
            height = size[1] / 2.0
        else:
            shape = PrimitiveShape.SPHERE
            diameter = rng.uniform(1.0, 2.5)
            size = np.full(3, diameter)
            height = diameter / 2.0
        xz = rng.uniform(-bound, bound, size=2)
        radius = _footprint_radius(size)
        if np.any(np.abs(xz) + radius > bound):
            continue
        if any(
            np.hypot(*(xz - p.pose.translation[[0, 2]])) < radius + _footprint_radius(p.size) + config.clearance
            for p in placed
        ):
            continue
        pose = yaw_transform(rng.uniform(-math.pi, math.pi), [xz[0], height, xz[1]])
        placed.append(Primitive(shape, pose, size, _random_albedo(rng), int(rng.integers(2**31))))
    return placed


def _mover_trajectory(start: np.ndarray, yaw0: float, speed: float, yaw_rate: float, frames: int) -> List[RigidTransform]:
    poses, position, yaw = [], start.astype(np.float64), yaw0
    for _ in range(frames):
        poses.append(yaw_transform(yaw, position))
        heading = np.array([math.cos(yaw), 0.0, -math.sin(yaw)])
        position = position + speed * heading
        yaw += yaw_rate
    return poses


def _mover_fits(box_track: Sequence[Box3D], statics: Sequence[Primitive], others: Sequence[Mover], config: SimConfig) -> bool:
    bound = config.scene_half_size
    radius = _footprint_radius(box_track[0].dims)
    for frame, box in enumerate(box_track):
        if np.any(np.abs(box_footprint(box)) > bound):
            return False
        xz = box.center[[0, 2]]
        for p in statics:
            if np.hypot(*(xz - p.pose.translation[[0, 2]])) < radius + _footprint_radius(p.size) + config.clearance:
                return False
        for m in others:
            other = m.box_at(frame)
            if np.hypot(*(xz - other.center[[0, 2]])) < radius + _footprint_radius(other.dims) + config.clearance:
                return False
    return True


def _place_movers(config: SimConfig, statics: Sequence[Primitive], rng: np.random.Generator) -> List[Mover]:
    count = int(rng.integers(config.mover_count_range[0], config.mover_count_range[1] + 1))
    movers: List[Mover] = []
    bound = config.scene_half_size
    for _ in range(count):
        for _ in range(config.max_attempts):
            dims = np.array(config.mover_dims) * (1.0 + rng.uniform(-config.mover_dims_jitter, config.mover_dims_jitter, size=3))
            start = np.array([rng.uniform(-bound, bound), dims[1] / 2.0, rng.uniform(-bound, bound)])
            yaw0 = rng.uniform(-math.pi, math.pi)
            if rng.random() < config.parked_probability:
                speed, yaw_rate = 0.0, 0.0
            else:
                speed = rng.uniform(*config.speed_range)
                yaw_rate = math.radians(rng.uniform(-config.yaw_rate_max_deg, config.yaw_rate_max_deg))
            trajectory = _mover_trajectory(start, yaw0, speed, yaw_rate, config.frame_count)
            primitive = Primitive(PrimitiveShape.CUBOID, trajectory[0], dims, _random_albedo(rng), int(rng.integers(2**31)))
            mover = Mover(primitive, trajectory)
            if _mover_fits([mover.box_at(f) for f in range(config.frame_count)], statics, movers, config):
                movers.append(mover)
                break
    return movers


def _perturb(pose: RigidTransform, config: SimConfig, rng: np.random.Generator) -> RigidTransform:
    """Recorded pose with Gaussian egomotion error"""
    rotvec = rng.normal(0.0, math.radians(config.pose_noise_rotation_deg), size=3)
    delta = RigidTransform(Rotation.from_rotvec(rotvec).as_matrix(), rng.normal(0.0, config.pose_noise_translation_std, size=3))
    return compose(pose, delta)


def generate_episode(kind: EpisodeKind, seed: int, config: Optional[SimConfig] = None) -> Episode:
    """Seeded synthetic episode; dynamic episodes hold at least one mover"""
    config = config or SimConfig()
    kind = EpisodeKind(kind)
    rng = np.random.default_rng(seed)

    statics = _place_statics(config, rng)
    movers = _place_movers(config, statics, rng) if kind == EpisodeKind.DYNAMIC else []
    if kind == EpisodeKind.DYNAMIC and not movers:
        raise DegenerateConfiguration(f"could not place a mover for seed {seed} within {config.max_attempts} attempts")
    rig = build_rig(config, rng)
    scene = SceneSpec(
        static_primitives=tuple(statics),
        movers=tuple(movers),
        cameras=tuple(tuple(rig) for _ in range(config.frame_count)),
        frame_count=config.frame_count,
        seed=int(seed),
        ground_half_size=config.ground_half_size,
        ground_seed=int(rng.integers(2**31)),
    )

    noisy_poses = config.pose_noise_translation_std > 0 or config.pose_noise_rotation_deg > 0
    rgb, depth, recorded = [], [], []
    for frame in range(config.frame_count):
        frame_rgb, frame_depth, frame_views = [], [], []
        for view in scene.cameras[frame]:
            image, dmap = render_view(scene, frame, view, config.depth_noise_std, rng)
            frame_rgb.append(image)
            frame_depth.append(dmap)
            frame_views.append(CameraView(view.intrinsics, _perturb(view.pose, config, rng)) if noisy_poses else view)
        rgb.append(frame_rgb)
        depth.append(frame_depth)
        recorded.append(frame_views)

    boxes = [[m.box_at(f) for m in movers] for f in range(config.frame_count)]
    return Episode(scene, rgb, depth, recorded, boxes, is_static=kind == EpisodeKind.STATIC)


def episode_seeds(seed: int, count: int) -> List[int]:
    """Independent child seeds spawned from one run seed"""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def generate_episodes(
    n_static: int,
    n_dynamic: int,
    seed: int,
    config: Optional[SimConfig] = None,
    threads: int = 1,
) -> List[Episode]:
    """Static episodes first, then dynamic ones; order is independent of thread count"""
    kinds = [EpisodeKind.STATIC] * n_static + [EpisodeKind.DYNAMIC] * n_dynamic
    seeds = episode_seeds(seed, len(kinds))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda ks: generate_episode(ks[0], ks[1], config), zip(kinds, seeds)))


def mover_occupancy(episode: Episode, frame: int, spec: GridSpec, margin: Optional[float] = None) -> np.ndarray:
    """(W, H, D) mask of voxels whose centres lie inside any mover box at this frame"""
    centers = voxel_centers(spec).reshape(-1, 3)
    grow = float(np.max(spec.voxel_size)) if margin is None else margin
    mask = np.zeros(len(centers), dtype=bool)
    for box in episode.mover_boxes[frame]:
        mask |= points_in_box(box, centers, grow)
    return mask.reshape(spec.resolution)
