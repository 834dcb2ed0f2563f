"""
Domain types shared by every component.
Geometry is float64; grids and images are float32. All types are immutable values.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from models.errors import NumericError, ShapeMismatch
from models.schemas import PrimitiveShape

ORTHONORMAL_TOL = 1e-9


def _frozen(a, dtype=np.float64, shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    if shape is not None and arr.shape != shape:
        raise ShapeMismatch(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]"""
    wrapped = math.atan2(math.sin(theta), math.cos(theta))
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) pose: x -> rotation @ x + translation"""
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, shape=(3, 3))
        t = _frozen(self.translation, shape=(3,))
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise NumericError("rigid transform has non-finite entries")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ORTHONORMAL_TOL or np.linalg.det(r) <= 0:
            raise NumericError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single (3,) point or an (N, 3) array"""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.array(d["rotation"]), np.array(d["translation"]))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise NumericError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise NumericError("image size must be at least 1x1")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_degrees: float) -> "CameraIntrinsics":
        f = 0.5 * width / math.tan(math.radians(fov_degrees) / 2.0)
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, width=width, height=height)


@dataclass(frozen=True, eq=False)
class CameraView:
    """One calibrated camera: intrinsics plus world-from-camera pose"""
    intrinsics: CameraIntrinsics
    pose: RigidTransform


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Metric cuboid bound to a W x H x D voxel lattice.

    `center` and `extent` are expressed in the frame of `reference_pose`
    (world-from-grid); voxel (i, j, k) has its centre at
    center - extent/2 + (index + 0.5) * voxel_size.
    """
    center: np.ndarray
    extent: np.ndarray
    resolution: Tuple[int, int, int]
    reference_pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, shape=(3,)))
        object.__setattr__(self, "extent", _frozen(self.extent, shape=(3,)))
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 1:
            raise ShapeMismatch(f"grid resolution must be three positive counts, got {self.resolution}")
        if np.any(self.extent <= 0):
            raise NumericError("grid extent must be positive")
        object.__setattr__(self, "resolution", res)

    @property
    def voxel_size(self) -> np.ndarray:
        return self.extent / np.array(self.resolution, dtype=np.float64)

    @property
    def n_voxels(self) -> int:
        w, h, d = self.resolution
        return w * h * d

    def to_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "extent": self.extent.tolist(),
            "resolution": list(self.resolution),
            "reference_pose": self.reference_pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(
            center=np.array(d["center"]),
            extent=np.array(d["extent"]),
            resolution=tuple(d["resolution"]),
            reference_pose=RigidTransform.from_dict(d["reference_pose"]),
        )


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Dense (W, H, D, C) float32 array bound to a GridSpec"""
    spec: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 4 or tuple(data.shape[:3]) != self.spec.resolution:
            raise ShapeMismatch(f"grid data shape {data.shape} does not match resolution {self.spec.resolution}")
        if not np.all(np.isfinite(data)):
            raise NumericError("grid contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return int(self.data.shape[3])

    @property
    def occupancy(self) -> np.ndarray:
        """Occupancy channel of a 4-channel input grid"""
        return self.data[..., 3]


@dataclass(frozen=True)
class OccupancySummary:
    occupied_count: int
    fraction: float


@dataclass(frozen=True, eq=False)
class Box3D:
    """Yaw-oriented box. dims = (length along local x, height along y, width along local z)"""
    center: np.ndarray
    dims: np.ndarray
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(self.center, shape=(3,)))
        dims = _frozen(self.dims, shape=(3,))
        if np.any(dims <= 0):
            raise NumericError("box dims must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "dims": self.dims.tolist(), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(np.array(d["center"]), np.array(d["dims"]), float(d["yaw"]))


@dataclass(frozen=True, eq=False)
class CorrespondencePair:
    index_i: Tuple[int, int, int]
    index_j: Tuple[int, int, int]
    m_i: Optional[np.ndarray] = None
    m_j: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class ObjectTemplate:
    """Object voxels of the frame-0 map: integer grid coordinates and unit features"""
    coords: np.ndarray
    features: np.ndarray
    box: Box3D
    spec: GridSpec

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def world_points(self) -> np.ndarray:
        from engines.voxel_engine import mem_to_world
        return mem_to_world(self.spec, self.coords.astype(np.float64))


@dataclass
class TrackState:
    """Growing trajectory; every per-frame list has the same length"""
    template: Optional[ObjectTemplate]
    current_box: Box3D
    boxes: List[Box3D] = field(default_factory=list)
    transforms: List[RigidTransform] = field(default_factory=list)
    inlier_counts: List[int] = field(default_factory=list)
    lost: List[bool] = field(default_factory=list)
    reasons: List[str] = field(default_factory=list)
    match_confidence: List[float] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Primitive:
    """Rigid scene element. size is full side lengths; a sphere uses size[0] as its diameter"""
    shape: PrimitiveShape
    pose: RigidTransform
    size: np.ndarray
    albedo: np.ndarray
    texture_seed: int

    def __post_init__(self):
        object.__setattr__(self, "size", _frozen(self.size, shape=(3,)))
        object.__setattr__(self, "albedo", _frozen(self.albedo, shape=(3,)))

    def at(self, pose: RigidTransform) -> "Primitive":
        return Primitive(self.shape, pose, self.size, self.albedo, self.texture_seed)


@dataclass(frozen=True, eq=False)
class Mover:
    primitive: Primitive
    trajectory: Sequence[RigidTransform]

    def box_at(self, frame: int) -> Box3D:
        from engines.geometry import yaw_from_rotation
        pose = self.trajectory[frame]
        return Box3D(pose.translation, self.primitive.size, yaw_from_rotation(pose.rotation))


@dataclass(frozen=True, eq=False)
class SceneSpec:
    static_primitives: Sequence[Primitive]
    movers: Sequence[Mover]
    cameras: Sequence[Sequence[CameraView]]
    frame_count: int
    seed: int
    ground_half_size: float
    ground_seed: int


@dataclass(frozen=True, eq=False)
class Episode:
    """Multiview RGB-D sequence. cameras holds the recorded (possibly noisy) poses"""
    scene: SceneSpec
    rgb: Sequence[Sequence[np.ndarray]]
    depth: Sequence[Sequence[np.ndarray]]
    cameras: Sequence[Sequence[CameraView]]
    mover_boxes: Sequence[Sequence[Box3D]]
    is_static: bool

    @property
    def frame_count(self) -> int:
        return len(self.rgb)

    @property
    def camera_count(self) -> int:
        return len(self.rgb[0]) if self.rgb else 0


@dataclass(frozen=True, eq=False)
class IouCurve:
    frames: np.ndarray
    values: np.ndarray
    per_sequence: np.ndarray

    def at(self, frame: int) -> float:
        return float(self.values[frame])
