"""
On-disk formats: episode directories, the dataset manifest and trajectory
records. Raw arrays are little-endian float32, row-major.

Episode directory:
    episode.json              scene spec, recorded cameras, ground-truth boxes
    f{frame}_c{cam}_rgb.raw   H x W x 3 colours in [0, 1]
    f{frame}_c{cam}_depth.raw H x W camera-z depth in meters, 0 = no hit
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from models.data_models import (
    Box3D,
    CameraIntrinsics,
    CameraView,
    Episode,
    Mover,
    Primitive,
    RigidTransform,
    SceneSpec,
    TrackState,
)
from models.errors import CorruptEpisode, DataMissing, IoError
from models.schemas import PrimitiveShape

EPISODE_FORMAT = "episode/1"
MANIFEST_FORMAT = "manifest/1"
TRAJECTORY_FORMAT = "trajectory/1"
EPISODE_FILE = "episode.json"
MANIFEST_FILE = "manifest.json"


def raw_name(frame: int, cam: int, kind: str) -> str:
    return f"f{frame}_c{cam}_{kind}.raw"


def _view_to_dict(view: CameraView) -> Dict[str, Any]:
    k = view.intrinsics
    return {
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
        "pose": view.pose.to_dict(),
    }


def _view_from_dict(d: Dict[str, Any]) -> CameraView:
    k = d["intrinsics"]
    intrinsics = CameraIntrinsics(float(k["fx"]), float(k["fy"]), float(k["cx"]), float(k["cy"]), int(k["width"]), int(k["height"]))
    return CameraView(intrinsics, RigidTransform.from_dict(d["pose"]))


def _primitive_to_dict(p: Primitive) -> Dict[str, Any]:
    return {
        "shape": p.shape.value,
        "pose": p.pose.to_dict(),
        "size": p.size.tolist(),
        "albedo": p.albedo.tolist(),
        "texture_seed": p.texture_seed,
    }


def _primitive_from_dict(d: Dict[str, Any]) -> Primitive:
    return Primitive(
        PrimitiveShape(d["shape"]),
        RigidTransform.from_dict(d["pose"]),
        np.array(d["size"]),
        np.array(d["albedo"]),
        int(d["texture_seed"]),
    )


def episode_to_dict(episode: Episode) -> Dict[str, Any]:
    scene = episode.scene
    return {
        "format": EPISODE_FORMAT,
        "seed": scene.seed,
        "is_static": episode.is_static,
        "frame_count": episode.frame_count,
        "camera_count": episode.camera_count,
        "scene": {
            "static_primitives": [_primitive_to_dict(p) for p in scene.static_primitives],
            "movers": [
                {"primitive": _primitive_to_dict(m.primitive), "trajectory": [t.to_dict() for t in m.trajectory]}
                for m in scene.movers
            ],
            "cameras": [[_view_to_dict(v) for v in frame] for frame in scene.cameras],
            "frame_count": scene.frame_count,
            "ground_half_size": scene.ground_half_size,
            "ground_seed": scene.ground_seed,
        },
        "recorded_cameras": [[_view_to_dict(v) for v in frame] for frame in episode.cameras],
        "mover_boxes": [[b.to_dict() for b in frame] for frame in episode.mover_boxes],
    }


def write_episode(path: Path, episode: Episode, extra: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        # episode seed takes precedence over the run seed
        header = {**(extra or {}), **episode_to_dict(episode)}
        (path / EPISODE_FILE).write_text(json.dumps(header, sort_keys=True, indent=1))
        for f in range(episode.frame_count):
            for c in range(episode.camera_count):
                (path / raw_name(f, c, "rgb")).write_bytes(np.asarray(episode.rgb[f][c], dtype="<f4").tobytes(order="C"))
                (path / raw_name(f, c, "depth")).write_bytes(np.asarray(episode.depth[f][c], dtype="<f4").tobytes(order="C"))
    except OSError as e:
        raise IoError(f"cannot write episode: {e}", str(path))
    return path


def _read_raw(path: Path, shape: Tuple[int, ...]) -> np.ndarray:
    try:
        payload = path.read_bytes()
    except OSError as e:
        raise CorruptEpisode(f"missing array file: {e}", str(path))
    expected = 4 * int(np.prod(shape))
    if len(payload) != expected:
        raise CorruptEpisode(f"array file has {len(payload)} bytes, expected {expected}", str(path))
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def read_episode(path: Path) -> Episode:
    path = Path(path)
    header_path = path / EPISODE_FILE
    try:
        header = json.loads(header_path.read_text())
        if header.get("format") != EPISODE_FORMAT:
            raise ValueError(f"unknown episode format {header.get('format')!r}")
        s = header["scene"]
        scene = SceneSpec(
            static_primitives=tuple(_primitive_from_dict(p) for p in s["static_primitives"]),
            movers=tuple(
                Mover(_primitive_from_dict(m["primitive"]), tuple(RigidTransform.from_dict(t) for t in m["trajectory"]))
                for m in s["movers"]
            ),
            cameras=tuple(tuple(_view_from_dict(v) for v in frame) for frame in s["cameras"]),
            frame_count=int(s["frame_count"]),
            seed=int(header["seed"]),
            ground_half_size=float(s["ground_half_size"]),
            ground_seed=int(s["ground_seed"]),
        )
        recorded = [[_view_from_dict(v) for v in frame] for frame in header["recorded_cameras"]]
        boxes = [[Box3D.from_dict(b) for b in frame] for frame in header["mover_boxes"]]
        frames, cams = int(header["frame_count"]), int(header["camera_count"])
        is_static = bool(header["is_static"])
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise CorruptEpisode(f"unreadable episode header: {e}", str(header_path))
    if len(recorded) != frames or any(len(v) != cams for v in recorded) or len(boxes) != frames:
        raise CorruptEpisode("header frame/camera counts disagree with its records", str(header_path))

    rgb, depth = [], []
    for f in range(frames):
        rgb.append([])
        depth.append([])
        for c in range(cams):
            k = recorded[f][c].intrinsics
            rgb[f].append(_read_raw(path / raw_name(f, c, "rgb"), (k.height, k.width, 3)))
            depth[f].append(_read_raw(path / raw_name(f, c, "depth"), (k.height, k.width)))
    return Episode(scene, rgb, depth, recorded, boxes, is_static)


def write_manifest(root: Path, entries: List[Dict[str, Any]], extra: Optional[Dict[str, Any]] = None) -> Path:
    """entries: {"path": relative dir, "static": bool, "seed": int}"""
    root = Path(root)
    doc = {"format": MANIFEST_FORMAT, "episodes": entries}
    if extra:
        doc.update(extra)
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / MANIFEST_FILE).write_text(json.dumps(doc, sort_keys=True, indent=1))
    except OSError as e:
        raise IoError(f"cannot write manifest: {e}", str(root / MANIFEST_FILE))
    return root / MANIFEST_FILE


def load_manifest(root: Path) -> List[Dict[str, Any]]:
    path = Path(root) / MANIFEST_FILE
    if not path.exists():
        raise DataMissing("dataset manifest not found", str(path))
    try:
        doc = json.loads(path.read_text())
        return [{"path": str(e["path"]), "static": bool(e["static"]), "seed": int(e["seed"])} for e in doc["episodes"]]
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptEpisode(f"unreadable manifest: {e}", str(path))


def load_dataset(root: Path, static: Optional[bool] = None) -> List[Episode]:
    """Episodes listed in the manifest, optionally filtered by static flag"""
    root = Path(root)
    return [read_episode(root / e["path"]) for e in load_manifest(root) if static is None or e["static"] == static]


def trajectory_records(state: TrackState) -> List[Dict[str, Any]]:
    return [
        {
            "frame": f,
            "center": box.center.tolist(),
            "dims": box.dims.tolist(),
            "yaw": box.yaw,
            "inliers": state.inlier_counts[f],
            "lost": state.lost[f],
            "reason": state.reasons[f],
            "match_confidence": state.match_confidence[f],
        }
        for f, box in enumerate(state.boxes)
    ]


def write_trajectory(path: Path, state: TrackState, extra: Optional[Dict[str, Any]] = None) -> Path:
    """JSON document plus a sibling CSV with one row per frame"""
    path = Path(path)
    records = trajectory_records(state)
    doc = {"format": TRAJECTORY_FORMAT, "frames": records}
    if extra:
        doc.update(extra)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, sort_keys=True, indent=1))
        with open(path.with_suffix(".csv"), "w", newline="") as f:
            if extra:
                f.write("# " + " ".join(f"{k}={extra[k]}" for k in sorted(extra)) + "\n")
            writer = csv.writer(f)
            writer.writerow(["frame", "cx", "cy", "cz", "length", "height", "width", "yaw", "inliers", "lost"])
            for r in records:
                writer.writerow([r["frame"], *(f"{v:.6f}" for v in r["center"]), *(f"{v:.6f}" for v in r["dims"]),
                                 f"{r['yaw']:.6f}", r["inliers"], int(r["lost"])])
    except OSError as e:
        raise IoError(f"cannot write trajectory: {e}", str(path))
    return path


def read_trajectory(path: Path) -> Tuple[List[Box3D], Dict[str, Any]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        boxes = [Box3D(np.array(r["center"]), np.array(r["dims"]), float(r["yaw"])) for r in doc["frames"]]
    except OSError as e:
        raise DataMissing(f"cannot read trajectory: {e}", str(path))
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptEpisode(f"unreadable trajectory: {e}", str(path))
    return boxes, doc
