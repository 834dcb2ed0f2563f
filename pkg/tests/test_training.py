# tests/test_training.py
import dataclasses
import math

import pytest
import torch

from agents.reliability_agent import ReliabilityNet
from engines.encoder import init_encoder, load_encoder
from engines.scene_engine import generate_episodes
from engines.training_engine import TrainingEngine, split_holdout, train_stage1
from models.errors import DataMissing
from utils.metrics import MetricsLog
from tests.conftest import small_config


def params_of(module):
    return [p.detach().clone() for p in module.parameters()]


def same_params(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


def test_stage1_updates_encoder_and_logs_losses(static_episode, config):
    metrics = MetricsLog(None)
    engine = TrainingEngine(config, metrics)
    encoder = init_encoder(config.encoder, config.seed)
    before = params_of(encoder)
    engine.train_stage1([static_episode], encoder)
    assert not same_params(before, params_of(encoder))
    rows = [r for r in metrics.rows if r["stage"] == "stage1"]
    assert rows and all(math.isfinite(r["loss"]) and r["loss"] >= 0 for r in rows)
    assert engine.iteration == config.train.stage1_iterations


def test_stage1_is_deterministic_for_a_seed(static_episode, config):
    a = train_stage1([static_episode], config)
    b = train_stage1([static_episode], config)
    assert same_params(params_of(a), params_of(b))


def test_stage2_trains_reliability_without_touching_encoder(static_episode, config):
    metrics = MetricsLog(None)
    encoder = init_encoder(config.encoder, config.seed)
    before = params_of(encoder)
    net = TrainingEngine(config, metrics).train_stage2_reliability([static_episode], encoder)
    assert isinstance(net, ReliabilityNet)
    assert same_params(before, params_of(encoder))
    assert any(r["stage"] == "stage2" for r in metrics.rows)


def test_stage3_with_unreachable_threshold_leaves_encoder_unchanged(static_episode, dynamic_episode, config):
    engine = TrainingEngine(config)
    encoder = init_encoder(config.encoder, config.seed)
    reliability = engine.train_stage2_reliability([static_episode], encoder)
    strict = config.model_copy(update={"train": config.train.model_copy(update={"reliability_threshold": 1.0})})
    before = params_of(encoder)
    TrainingEngine(strict).train_stage3_finetune([dynamic_episode], encoder, reliability)
    assert same_params(before, params_of(encoder))


def test_stage3_with_oracle_mask_trains(dynamic_episode, config):
    metrics = MetricsLog(None)
    encoder = init_encoder(config.encoder, config.seed)
    before = params_of(encoder)
    TrainingEngine(config, metrics).train_stage3_finetune([dynamic_episode], encoder, None, oracle=True)
    assert not same_params(before, params_of(encoder))
    assert any(r["stage"] == "stage3" for r in metrics.rows)


def test_curriculum_writes_checkpoints(tmp_path, static_episode, dynamic_episode, config):
    result = TrainingEngine(config).run_curriculum(
        [static_episode, static_episode], [dynamic_episode], (1, 2, 3), checkpoint_dir=tmp_path, extra={"seed": 0}
    )
    names = sorted(p.name for p in result["checkpoints"])
    assert names == ["stage1_encoder.ckpt", "stage2_reliability.ckpt", "stage3_encoder.ckpt"]
    loaded, header = load_encoder(tmp_path / "stage3_encoder.ckpt")
    assert header["seed"] == 0
    assert same_params(params_of(loaded), params_of(result["encoder"]))


def test_curriculum_requires_the_data_each_stage_uses(static_episode, config):
    engine = TrainingEngine(config)
    with pytest.raises(DataMissing):
        engine.run_curriculum([static_episode], [], (1, 2, 3))
    with pytest.raises(DataMissing):
        engine.run_curriculum([], [], (1,))


def test_split_holdout():
    items = list(range(20))
    train, hold = split_holdout(items)
    assert train == items[:18] and hold == items[18:]
    assert split_holdout([1]) == ([1], [])


def test_retrieval_is_a_fraction(static_episode, config):
    engine = TrainingEngine(config)
    score = engine.retrieval(init_encoder(config.encoder, 0), [static_episode])
    assert 0.0 <= score <= 1.0


@pytest.mark.slow
def test_stage1_training_beats_random_features_on_held_out_retrieval():
    config = small_config(stage1_iterations=150, pairs_per_batch=128, negatives_per_positive=64, learning_rate=1e-3)
    episodes = generate_episodes(6, 0, seed=3, config=config.sim)
    train_eps, holdout = episodes[:5], episodes[5:]
    engine = TrainingEngine(config)
    random_score = engine.retrieval(init_encoder(config.encoder, config.seed), holdout)
    trained = engine.train_stage1(train_eps)
    assert engine.retrieval(trained, holdout) > random_score


def test_view_grid_cache_is_bounded_lru():
    config = small_config(grid_cache_size=2)
    episode = generate_episodes(1, 0, seed=5, config=config.sim)[0]
    engine = TrainingEngine(config)
    first = engine.view_grid(episode, (0, 0))
    engine.view_grid(episode, (0, 1))
    assert engine.view_grid(episode, (0, 0)) is first
    engine.view_grid(episode, (1, 0))
    assert len(engine._grids) == 2
    # (0, 1) was least recently used
    assert engine.view_grid(episode, (0, 0)) is first
    assert (episode.scene.seed, True, 0, 1) not in engine._grids


def test_view_grid_cache_is_keyed_on_episode_seed_not_identity():
    config = small_config()
    a, b = generate_episodes(2, 0, seed=6, config=config.sim)
    engine = TrainingEngine(config)
    grid_a = engine.view_grid(a, (0, 0))
    assert engine.view_grid(dataclasses.replace(a), (0, 0)) is grid_a
    assert engine.view_grid(b, (0, 0)) is not grid_a
