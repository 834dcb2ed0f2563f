"""
Metric voxel grids: world <-> memory coordinates, RGB-D voxelization,
multiview fusion, trilinear sampling, search regions and .vxg serialization.
"""

import json
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from engines.geometry import invert, unproject_depth
from models.data_models import (
    CameraIntrinsics,
    GridSpec,
    OccupancySummary,
    RigidTransform,
    VoxelGrid,
)
from models.errors import CorruptGrid, IoError, OutOfBounds, ShapeMismatch
from models.schemas import GridConfig
from utils.logger import get_logger

logger = get_logger(__name__)

VXG_FORMAT = "vxg/1"


def world_to_mem(spec: GridSpec, p: np.ndarray) -> np.ndarray:
    """Continuous grid coordinates of world points; voxel centres land on integers"""
    p = np.asarray(p, dtype=np.float64)
    local = invert(spec.reference_pose).apply(p)
    origin = spec.center - spec.extent / 2.0
    return (local - origin) / spec.voxel_size - 0.5


def mem_to_world(spec: GridSpec, coord: np.ndarray) -> np.ndarray:
    coord = np.asarray(coord, dtype=np.float64)
    origin = spec.center - spec.extent / 2.0
    local = origin + (coord + 0.5) * spec.voxel_size
    return spec.reference_pose.apply(local)


def voxel_centers(spec: GridSpec) -> np.ndarray:
    """World positions of every voxel centre, shaped (W, H, D, 3)"""
    idx = np.stack(np.meshgrid(*[np.arange(r) for r in spec.resolution], indexing="ij"), axis=-1)
    return mem_to_world(spec, idx.reshape(-1, 3)).reshape(*spec.resolution, 3)


def in_bounds(spec: GridSpec, idx: np.ndarray) -> np.ndarray:
    idx = np.asarray(idx)
    return np.all((idx >= 0) & (idx < np.array(spec.resolution)), axis=-1)


def nearest_voxel(spec: GridSpec, p: np.ndarray) -> np.ndarray:
    return np.floor(world_to_mem(spec, p) + 0.5).astype(np.int64)


def empty_grid(spec: GridSpec, channels: int = 4) -> VoxelGrid:
    return VoxelGrid(spec, np.zeros((*spec.resolution, channels), dtype=np.float32))


def voxelize_rgbd(
    image: np.ndarray,
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    cam_pose: RigidTransform,
    spec: GridSpec,
) -> VoxelGrid:
    """Nearest-voxel splat of one RGB-D frame into a 4-channel (RGB + occupancy) grid.

    Colours are averaged over the pixels landing in a voxel; points outside the
    cube are dropped.
    """
    image = np.asarray(image)
    if image.shape[:2] != np.shape(depth) or image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"image {image.shape} does not match depth {np.shape(depth)}")
    colors = image.astype(np.float64)
    if np.issubdtype(image.dtype, np.integer):
        colors /= 255.0

    points_cam, pixels = unproject_depth(intrinsics, depth)
    idx = nearest_voxel(spec, cam_pose.apply(points_cam)) if len(points_cam) else np.zeros((0, 3), np.int64)
    keep = in_bounds(spec, idx)
    idx = idx[keep]
    pixel_colors = colors[pixels[keep, 0], pixels[keep, 1]]

    flat = np.ravel_multi_index(idx.T, spec.resolution) if len(idx) else np.zeros(0, np.int64)
    counts = np.bincount(flat, minlength=spec.n_voxels).astype(np.float64)
    sums = np.stack([np.bincount(flat, weights=pixel_colors[:, c], minlength=spec.n_voxels) for c in range(3)], axis=1)

    data = np.zeros((spec.n_voxels, 4), dtype=np.float64)
    hit = counts > 0
    data[hit, :3] = sums[hit] / counts[hit, None]
    data[hit, 3] = 1.0
    if not hit.any():
        logger.warning("EmptyGrid: no voxels occupied by this frame")
    return VoxelGrid(spec, data.reshape(*spec.resolution, 4).astype(np.float32))


def fuse_grids(grids: Sequence[VoxelGrid]) -> VoxelGrid:
    """Voxel-wise max occupancy with occupancy-weighted mean colour"""
    if not grids:
        raise ShapeMismatch("cannot fuse an empty list of grids")
    spec = grids[0].spec
    stack = np.stack([g.data for g in grids]).astype(np.float64)
    if stack.shape[1:] != (*spec.resolution, 4):
        raise ShapeMismatch("fused grids must share a 4-channel spec")
    occ = stack[..., 3]
    weight = occ.sum(axis=0)
    fused = np.zeros(stack.shape[1:], dtype=np.float64)
    nz = weight > 0
    fused[..., :3][nz] = (stack[..., :3] * occ[..., None]).sum(axis=0)[nz] / weight[nz][:, None]
    fused[..., 3] = occ.max(axis=0)
    return VoxelGrid(spec, fused.astype(np.float32))


def voxelize_views(
    images: Iterable[np.ndarray],
    depths: Iterable[np.ndarray],
    views: Iterable,
    spec: GridSpec,
) -> VoxelGrid:
    """Voxelize and fuse several RGB-D views (CameraView records) into one grid"""
    grids = [voxelize_rgbd(img, dep, view.intrinsics, view.pose, spec) for img, dep, view in zip(images, depths, views)]
    return fuse_grids(grids)


def occupancy_summary(grid: VoxelGrid) -> OccupancySummary:
    count = int(np.count_nonzero(grid.occupancy > 0))
    return OccupancySummary(occupied_count=count, fraction=count / grid.spec.n_voxels)


def trilinear_sample(grid: VoxelGrid, coord) -> np.ndarray:
    """Trilinear interpolation of the 8 voxels around a continuous coordinate"""
    coord = np.asarray(coord, dtype=np.float64)
    res = np.array(grid.spec.resolution)
    if coord.shape != (3,) or np.any(coord < -1e-9) or np.any(coord > res - 1 + 1e-9):
        raise OutOfBounds(f"coordinate {coord.tolist()} outside grid {tuple(res.tolist())}")
    coord = np.clip(coord, 0, res - 1)
    lo = np.minimum(np.floor(coord).astype(np.int64), np.maximum(res - 2, 0))
    frac = coord - lo
    hi = np.minimum(lo + 1, res - 1)
    out = np.zeros(grid.channels, dtype=np.float64)
    for corner in range(8):
        pick = [(corner >> a) & 1 for a in range(3)]
        w = np.prod([frac[a] if pick[a] else 1.0 - frac[a] for a in range(3)])
        if w == 0.0:
            continue
        i, j, k = (hi[a] if pick[a] else lo[a] for a in range(3))
        out += w * grid.data[i, j, k].astype(np.float64)
    return out


def scene_spec(config: GridConfig, resolution_scale: float = 1.0) -> GridSpec:
    """Full-scene grid; resolution_scale=0.5 gives the half-resolution variant"""
    res = tuple(max(1, int(round(r * resolution_scale))) for r in config.scene_resolution)
    return GridSpec(np.array(config.scene_center), np.array(config.scene_extent), res)


def make_search_region(
    last_center: np.ndarray,
    resolution: Optional[Tuple[int, int, int]] = None,
    config: Optional[GridConfig] = None,
) -> GridSpec:
    """Search cube recentred on the object's last known position"""
    config = config or GridConfig()
    res = tuple(resolution) if resolution is not None else config.resolved_search_resolution()
    return GridSpec(np.asarray(last_center, dtype=np.float64), np.array(config.search_extent), res)


def save_voxel_grid(path: Path, grid: VoxelGrid, extra: Optional[dict] = None) -> None:
    """JSON header line, then little-endian float32 (W, H, D, C) row-major"""
    header = {"format": VXG_FORMAT, "spec": grid.spec.to_dict(), "channels": grid.channels}
    if extra:
        header.update(extra)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as f:
            f.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
            f.write(grid.data.astype("<f4").tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write grid: {e}", str(path))


def load_voxel_grid(path: Path) -> VoxelGrid:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        spec = GridSpec.from_dict(header["spec"])
        channels = int(header["channels"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CorruptGrid(f"unreadable grid header: {e}", str(path))
    expected = spec.n_voxels * channels * 4
    if len(payload) != expected:
        raise CorruptGrid(f"payload has {len(payload)} bytes, header implies {expected}", str(path))
    data = np.frombuffer(payload, dtype="<f4").reshape(*spec.resolution, channels)
    return VoxelGrid(spec, data.astype(np.float32))
