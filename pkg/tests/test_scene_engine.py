# tests/test_scene_engine.py
import numpy as np
import pytest

from engines.geometry import box_footprint, look_at
from engines.scene_engine import (
    build_rig,
    episode_seeds,
    generate_episode,
    generate_episodes,
    mover_occupancy,
    render_view,
)
from engines.voxel_engine import occupancy_summary, scene_spec, voxelize_views
from models.data_models import CameraIntrinsics, CameraView, SceneSpec
from models.errors import DegenerateConfiguration
from models.schemas import EpisodeKind, SimConfig
from tests.conftest import small_config


def test_episode_shapes(static_episode, dynamic_episode):
    sim = small_config().sim
    for ep in (static_episode, dynamic_episode):
        assert ep.frame_count == sim.frame_count
        assert ep.camera_count == sim.n_cameras
        assert ep.rgb[0][0].shape == (sim.image_height, sim.image_width, 3)
        assert ep.depth[0][0].dtype == np.float32
        assert 0.0 <= ep.rgb[0][0].min() and ep.rgb[0][0].max() <= 1.0
    assert static_episode.is_static and not static_episode.scene.movers
    assert all(frame == [] for frame in static_episode.mover_boxes)
    assert len(dynamic_episode.mover_boxes[0]) >= 1


def test_generation_is_seed_deterministic():
    sim = small_config().sim
    a = generate_episode(EpisodeKind.DYNAMIC, 5, sim)
    b = generate_episode(EpisodeKind.DYNAMIC, 5, sim)
    assert np.array_equal(a.depth[1][0], b.depth[1][0])
    assert np.array_equal(a.rgb[2][1], b.rgb[2][1])


def test_movers_stay_inside_scene(dynamic_episode):
    bound = small_config().sim.scene_half_size
    for frame in dynamic_episode.mover_boxes:
        for box in frame:
            assert np.all(np.abs(box_footprint(box)) <= bound + 1e-9)
            assert box.center[1] == pytest.approx(box.dims[1] / 2.0)


def test_render_hits_ground_straight_below():
    scene = SceneSpec((), (), ((),), 1, 0, 20.0, 3)
    k = CameraIntrinsics.from_fov(5, 5, 40.0)
    view = CameraView(k, look_at([0.0, 10.0, 0.001], [0.0, 0.0, 0.0]))
    rgb, depth = render_view(scene, 0, view)
    assert depth[2, 2] == pytest.approx(10.0, rel=1e-4)
    assert np.all(depth > 0)
    assert rgb.shape == (5, 5, 3)


def test_rig_cameras_look_at_scene():
    views = build_rig(SimConfig(n_cameras=4), np.random.default_rng(0))
    assert len(views) == 4
    for v in views:
        eye = v.pose.translation
        forward = v.pose.rotation[:, 2]
        assert eye[1] > 0
        # the optical axis passes close to the origin
        t = -eye @ forward
        assert np.linalg.norm(eye + t * forward) < 3.0


def test_fused_views_see_static_geometry(static_episode):
    spec = scene_spec(small_config().grid)
    grid = voxelize_views(static_episode.rgb[0], static_episode.depth[0], static_episode.cameras[0], spec)
    assert occupancy_summary(grid).occupied_count > 0


def test_mover_occupancy_marks_voxels(dynamic_episode):
    spec = scene_spec(small_config().grid)
    mask = mover_occupancy(dynamic_episode, 0, spec)
    assert mask.shape == spec.resolution
    assert mask.any()
    assert not mask.all()


def test_dynamic_episode_without_room_for_movers_raises():
    sim = SimConfig(scene_half_size=1.0, max_attempts=5, image_width=4, image_height=4, frame_count=2)
    with pytest.raises(DegenerateConfiguration):
        generate_episode(EpisodeKind.DYNAMIC, 0, sim)


def test_episode_seeds_independent_of_thread_count():
    sim = SimConfig(image_width=8, image_height=8, n_cameras=2, frame_count=2, max_attempts=400)
    one = generate_episodes(1, 1, 3, sim, threads=1)
    two = generate_episodes(1, 1, 3, sim, threads=2)
    assert [e.scene.seed for e in one] == [e.scene.seed for e in two] == episode_seeds(3, 2)
    assert one[0].is_static and not one[1].is_static
    assert np.array_equal(one[1].depth[1][1], two[1].depth[1][1])
