# tests/conftest.py
import numpy as np
import pytest
import torch

from engines.encoder import configure_torch, init_encoder
from engines.scene_engine import generate_episode
from models.data_models import Box3D
from models.schemas import EpisodeKind, GridConfig, RunConfig, SimConfig, TrackConfig, TrainConfig


def small_config(**train_overrides) -> RunConfig:
    """Low-resolution run config that keeps each test under a few seconds"""
    train = dict(
        pairs_per_batch=32,
        negatives_per_positive=16,
        dictionary_capacity=256,
        reliability_samples=32,
        retrieval_queries=8,
        retrieval_candidates=64,
        stage1_iterations=3,
        stage2_iterations=3,
        stage3_iterations=2,
        eval_every=2,
    )
    train.update(train_overrides)
    return RunConfig(
        seed=0,
        sim=SimConfig(image_width=24, image_height=24, n_cameras=3, frame_count=3, max_attempts=400),
        grid=GridConfig(scene_resolution=(16, 8, 16)),
        train=TrainConfig(**train),
        track=TrackConfig(ransac_iterations=64),
    )


@pytest.fixture(autouse=True)
def _torch_determinism():
    configure_torch(0, 1)
    yield
    torch.use_deterministic_algorithms(False)


@pytest.fixture
def config() -> RunConfig:
    return small_config()


@pytest.fixture
def encoder(config):
    return init_encoder(config.encoder, config.seed)


@pytest.fixture(scope="session")
def static_episode():
    return generate_episode(EpisodeKind.STATIC, 11, small_config().sim)


@pytest.fixture(scope="session")
def dynamic_episode():
    return generate_episode(EpisodeKind.DYNAMIC, 12, small_config().sim)


def make_box(x=0.0, z=0.0, yaw=0.0, dims=(4.0, 1.6, 2.0)) -> Box3D:
    return Box3D(np.array([x, dims[1] / 2.0, z]), np.array(dims), yaw)
