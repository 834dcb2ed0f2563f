# tests/test_benchmark.py
import json

import pytest

from engines.benchmark_engine import benchmark_methods, method_setup, run_benchmark, sequences, write_report
from models.errors import DataMissing
from models.schemas import Method


def test_methods_follow_available_encoders(config, encoder):
    assert benchmark_methods({}, config) == [Method.RANDOM, Method.ZERO_MOTION]
    full = benchmark_methods({Method.TRAINED: encoder, Method.NO_STATIC_SELECTION: encoder}, config)
    assert full[0] == Method.TRAINED
    assert {Method.NO_SEARCH_REGION, Method.NO_SEARCH_REGION_HALF, Method.NO_STATIC_SELECTION} <= set(full)
    no_ablations = config.model_copy(update={"evaluation": config.evaluation.model_copy(update={"run_ablations": False})})
    assert benchmark_methods({Method.TRAINED: encoder}, no_ablations) == [Method.TRAINED, Method.RANDOM, Method.ZERO_MOTION]


def test_method_setup_switches_off_search_region(config, encoder):
    enc, cfg = method_setup(Method.NO_SEARCH_REGION_HALF, {Method.TRAINED: encoder}, config)
    assert enc is encoder
    assert cfg.track.use_search_region is False and cfg.track.resolution_scale == 0.5
    assert method_setup(Method.ZERO_MOTION, {}, config)[0] is None


def test_sequences_skip_static_episodes(static_episode, dynamic_episode):
    seqs = sequences([static_episode, dynamic_episode])
    assert all(ep is dynamic_episode for ep, _ in seqs)
    assert len(seqs) == len(dynamic_episode.mover_boxes[0])


def test_benchmark_report(tmp_path, dynamic_episode, config, encoder):
    report = run_benchmark({Method.TRAINED: encoder}, [dynamic_episode], config)
    methods = report["methods"]
    assert set(methods) == {"trained", "random", "zero_motion", "no_search_region", "no_search_region_half_res"}
    zero = methods["zero_motion"]["all"]
    assert zero["curve"][0] == pytest.approx(1.0)
    assert "IOU@2" in zero
    assert methods["zero_motion"]["lost_frames"] == 0

    json_path, csv_path = write_report(tmp_path, report, {"config_hash": "abc", "seed": 0})
    assert json.loads(json_path.read_text())["config_hash"] == "abc"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc seed=0"
    assert lines[1] == "method,frame,mean_iou,split"
    assert len(lines) > 2


def test_benchmark_is_independent_of_thread_count(dynamic_episode, config, encoder):
    one = run_benchmark({Method.TRAINED: encoder}, [dynamic_episode, dynamic_episode], config, threads=1)
    two = run_benchmark({Method.TRAINED: encoder}, [dynamic_episode, dynamic_episode], config, threads=2)
    assert one == two


def test_benchmark_needs_movers(static_episode, config):
    with pytest.raises(DataMissing):
        run_benchmark({}, [static_episode], config)
