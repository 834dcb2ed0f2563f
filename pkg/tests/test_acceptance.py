# tests/test_acceptance.py
# Desk-scale runs: full training curriculum, then the tracking benchmark on held-out dynamic episodes.
import copy
from pathlib import Path

import numpy as np
import pytest

from engines.benchmark_engine import run_benchmark
from engines.encoder import init_encoder
from engines.scene_engine import generate_episodes
from engines.schema_engine import SchemaEngine
from engines.training_engine import TrainingEngine, split_holdout
from models.schemas import Method
from utils.metrics import MetricsLog

pytestmark = pytest.mark.slow

DESK_CONFIG = Path(__file__).resolve().parent.parent / "config" / "desk_config.json"
N_STATIC, N_DYNAMIC_TRAIN, N_DYNAMIC_EVAL = 200, 10, 50


@pytest.fixture(scope="module")
def desk():
    return SchemaEngine(str(DESK_CONFIG), environ={}).config


@pytest.fixture(scope="module")
def episodes(desk):
    eps = generate_episodes(N_STATIC, N_DYNAMIC_TRAIN + N_DYNAMIC_EVAL, desk.seed, desk.sim, desk.threads)
    static = [e for e in eps if e.is_static]
    dynamic = [e for e in eps if not e.is_static]
    return static, dynamic[:N_DYNAMIC_TRAIN], dynamic[N_DYNAMIC_TRAIN:]


@pytest.fixture(scope="module")
def trained(desk, episodes):
    static, dynamic_train, _ = episodes
    metrics = MetricsLog(None)
    engine = TrainingEngine(desk, metrics)
    stage1 = engine.run_curriculum(static, dynamic_train, stages=[1])["encoder"]

    full = engine.run_curriculum(static, dynamic_train, stages=[2, 3], encoder=copy.deepcopy(stage1))["encoder"]
    no_selection_config = desk.model_copy(update={"train": desk.train.model_copy(update={"use_static_selection": False})})
    no_selection = TrainingEngine(no_selection_config).run_curriculum(
        static, dynamic_train, stages=[3], encoder=copy.deepcopy(stage1)
    )["encoder"]
    return {"stage1": stage1, "full": full, "no_selection": no_selection, "metrics": metrics}


@pytest.fixture(scope="module")
def report(desk, episodes, trained):
    encoders = {
        Method.TRAINED: trained["full"],
        Method.RANDOM: init_encoder(desk.encoder, desk.seed),
        Method.NO_STATIC_SELECTION: trained["no_selection"],
    }
    return run_benchmark(encoders, episodes[2], desk, desk.threads)["methods"]


def iou8(report, method, split="all"):
    return report[method][split]["IOU@8"]


def test_stage1_loss_falls_and_retrieval_clears_seventy_percent(desk, episodes, trained):
    rows = [r for r in trained["metrics"].rows if r["stage"] == "stage1"]
    around_100 = [r["loss"] for r in rows if 91 <= r["iteration"] <= 100]
    assert around_100
    assert np.mean(around_100) < rows[0]["loss"]

    _, holdout = split_holdout(episodes[0])
    engine = TrainingEngine(desk)
    trained_top1 = engine.retrieval(trained["stage1"], holdout)
    random_top1 = engine.retrieval(init_encoder(desk.encoder, desk.seed), holdout)
    assert trained_top1 >= 0.70
    assert random_top1 < trained_top1


def test_trained_tracker_beats_zero_motion_and_random_features(report):
    trained = iou8(report, "trained")
    assert trained >= iou8(report, "zero_motion") + 0.15
    assert trained >= iou8(report, "random") + 0.15


def test_ablations_lower_iou(report):
    assert iou8(report, "no_search_region") <= iou8(report, "trained") - 0.05
    assert iou8(report, "no_search_region_half_res") <= iou8(report, "no_search_region") - 0.05
    assert iou8(report, "no_static_selection") <= iou8(report, "trained") - 0.05


def test_static_objects_track_at_least_as_well_as_moving_ones(report):
    trained = report["trained"]
    assert "static" in trained and "moving" in trained
    assert trained["static"]["IOU@8"] >= trained["moving"]["IOU@8"]
