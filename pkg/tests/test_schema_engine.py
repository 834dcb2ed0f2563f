# tests/test_schema_engine.py
import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from engines.schema_engine import SchemaEngine, config_hash, deep_merge, env_overrides
from models.errors import DataMissing
from models.schemas import RunConfig

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DESK = str(CONFIG_DIR / "desk_config.json")


def test_shipped_configs_validate():
    desk = SchemaEngine(DESK, environ={}).config
    full = SchemaEngine(str(CONFIG_DIR / "full_config.json"), environ={}).config
    assert desk.sim.frame_count == 9
    assert full.encoder.final_channels == 64
    assert full.grid.scene_resolution == (128, 32, 128)
    assert full.train.stage1_iterations == 200000


def test_env_overrides_nest_and_parse_json():
    overrides = env_overrides({"N3DT_TRAIN__TEMPERATURE": "0.1", "N3DT_SEED": "4", "OTHER": "x", "N3DT_TRACK__USE_SEARCH_REGION": "false"})
    assert overrides == {"train": {"temperature": 0.1}, "seed": 4, "track": {"use_search_region": False}}


def test_env_beats_file_and_cli_beats_env():
    engine = SchemaEngine(DESK, environ={"N3DT_SEED": "5", "N3DT_TRAIN__MOMENTUM": "0.5"})
    assert engine.config.seed == 5
    assert engine.config.train.momentum == 0.5
    engine.override(seed=9, threads=None)
    assert engine.config.seed == 9
    assert engine.config.threads == 1


def test_deep_merge_keeps_siblings():
    merged = deep_merge({"a": {"x": 1, "y": 2}, "b": 1}, {"a": {"y": 3}})
    assert merged == {"a": {"x": 1, "y": 3}, "b": 1}


def test_invalid_values_fail_validation(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"train": {"temperature": -1.0}}))
    with pytest.raises(ValidationError):
        SchemaEngine(str(path), environ={})


def test_missing_or_malformed_file(tmp_path):
    with pytest.raises(DataMissing):
        SchemaEngine(str(tmp_path / "nope.json"), environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataMissing):
        SchemaEngine(str(bad), environ={})


def test_config_hash_is_stable_and_sensitive():
    a, b = RunConfig(), RunConfig()
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16
    assert config_hash(a) != config_hash(RunConfig(seed=1))
