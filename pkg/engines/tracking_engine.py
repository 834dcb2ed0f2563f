"""
Test-time tracking: template from the frame-0 map, per-frame search region
around the last box, soft-argmax relocation, RANSAC rigid fit, box update.
"""

import math
from typing import Optional, Tuple

import numpy as np

from agents.correspondence_agent import extract_template, match_confidence, soft_argmax_batch
from agents.ransac_agent import estimate_rigid_ransac
from engines.encoder import NeuralMapper, forward_encoder
from engines.geometry import rotation_about_y, yaw_from_rotation
from engines.voxel_engine import make_search_region, mem_to_world, scene_spec, voxelize_views
from models.data_models import Box3D, Episode, GridSpec, RigidTransform, TrackState, VoxelGrid
from models.errors import DegenerateConfiguration, EmptyTemplate
from models.schemas import RunConfig, TrackConfig
from utils.logger import get_logger

logger = get_logger(__name__)


def transform_box(t: RigidTransform, box: Box3D) -> Box3D:
    """Rigidly move a box; only the vertical-axis part of the rotation reaches its yaw"""
    yaw = yaw_from_rotation(t.rotation @ rotation_about_y(box.yaw))
    return Box3D(t.apply(box.center), box.dims, yaw)


def region_spec(center: np.ndarray, config: RunConfig) -> GridSpec:
    """Search cube at center, or the fixed scene grid when search regions are off"""
    track = config.track
    if not track.use_search_region:
        return scene_spec(config.grid, track.resolution_scale)
    res = tuple(max(1, int(round(r * track.resolution_scale))) for r in config.grid.resolved_search_resolution())
    return make_search_region(center, res, config.grid)


def encode_frame(encoder: NeuralMapper, episode: Episode, frame: int, spec: GridSpec) -> Tuple[VoxelGrid, VoxelGrid]:
    """Fused input grid of every camera at this frame and its feature map"""
    grid = voxelize_views(episode.rgb[frame], episode.depth[frame], episode.cameras[frame], spec)
    return grid, forward_encoder(encoder, grid)


def min_inliers(track: TrackConfig, template_size: int) -> int:
    return max(track.min_inliers, int(math.ceil(track.min_inlier_fraction * template_size)))


def start_track(episode: Episode, box0: Box3D, encoder: NeuralMapper, config: RunConfig) -> TrackState:
    spec = region_spec(box0.center, config)
    input0, map0 = encode_frame(encoder, episode, 0, spec)
    template = extract_template(map0, box0, input0, config.track.template_all_in_box)
    return TrackState(
        template=template,
        current_box=box0,
        boxes=[box0],
        transforms=[RigidTransform.identity()],
        inlier_counts=[len(template)],
        lost=[False],
        reasons=["init"],
        match_confidence=[1.0],
    )


def _record(state: TrackState, box: Box3D, transform: RigidTransform, inliers: int, lost: bool, reason: str, confidence: float):
    state.current_box = box
    state.boxes.append(box)
    state.transforms.append(transform)
    state.inlier_counts.append(inliers)
    state.lost.append(lost)
    state.reasons.append(reason)
    state.match_confidence.append(confidence)


def step_track(
    state: TrackState,
    episode: Episode,
    frame: int,
    encoder: NeuralMapper,
    config: RunConfig,
    rng: np.random.Generator,
) -> TrackState:
    """Advance one frame. Lost frames keep the previous box and are flagged, never raised"""
    track = config.track
    template = state.template
    spec = region_spec(state.current_box.center, config)
    _, map_t = encode_frame(encoder, episode, frame, spec)

    relocated = soft_argmax_batch(template.features, map_t, track.sharpness)
    confidence = match_confidence(template.features, map_t, relocated)
    src = template.world_points()
    dst = mem_to_world(spec, relocated)

    need = min_inliers(track, len(template))
    try:
        transform, inliers = estimate_rigid_ransac(src, dst, track.ransac_iterations, track.inlier_threshold, rng)
        count = int(inliers.sum())
    except DegenerateConfiguration as e:
        transform, count = None, 0
        reason = f"TrackLost: {e}"
    else:
        reason = f"TrackLost: {count} inliers < {need}" if count < need else "ok"

    if transform is None or count < need:
        logger.warning("frame %d: %s", frame, reason)
        _record(state, state.current_box, state.transforms[-1], count, True, reason, confidence)
    else:
        _record(state, transform_box(transform, template.box), transform, count, False, reason, confidence)
    return state


def zero_motion_sequence(episode: Episode, box0: Box3D) -> TrackState:
    """Baseline that reports the initial box at every frame"""
    n = episode.frame_count
    return TrackState(
        template=None,
        current_box=box0,
        boxes=[box0] * n,
        transforms=[RigidTransform.identity()] * n,
        inlier_counts=[0] * n,
        lost=[False] * n,
        reasons=["zero_motion"] * n,
        match_confidence=[0.0] * n,
    )


def track_sequence(
    episode: Episode,
    box0: Box3D,
    encoder: Optional[NeuralMapper],
    config: RunConfig,
) -> TrackState:
    """Track box0 through the episode; encoder=None gives the zero-motion baseline"""
    if encoder is None:
        return zero_motion_sequence(episode, box0)
    try:
        state = start_track(episode, box0, encoder, config)
    except EmptyTemplate as e:
        logger.warning("%s; propagating the initial box", e)
        state = zero_motion_sequence(episode, box0)
        state.lost = [False] + [True] * (episode.frame_count - 1)
        state.reasons = ["init"] + [f"EmptyTemplate: {e}"] * (episode.frame_count - 1)
        return state

    rng = np.random.default_rng(config.seed)
    for frame in range(1, episode.frame_count):
        step_track(state, episode, frame, encoder, config, rng)
    return state
