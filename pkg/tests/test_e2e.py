# tests/test_e2e.py
import json

import pytest

from main import main
from tests.conftest import small_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config().model_dump(mode="json")))
    return str(path)


def run(*argv) -> int:
    return main([str(a) for a in argv])


def test_gen_train_track_eval_viz(tmp_path, config_file):
    data, ckpt = tmp_path / "data", tmp_path / "ckpt"
    assert run("gen", "--config", config_file, "--n-static", 2, "--n-dynamic", 1, "--out", data) == 0
    manifest = json.loads((data / "manifest.json").read_text())
    assert [e["static"] for e in manifest["episodes"]] == [True, True, False]
    assert len(manifest["config_hash"]) == 16

    assert run("train", "--config", config_file, "--data", data, "--out", ckpt, "--iters", 2) == 0
    encoder = ckpt / "stage3_encoder.ckpt"
    assert encoder.exists() and (ckpt / "stage2_reliability.ckpt").exists()
    assert (ckpt / "metrics.csv").read_text().startswith("# config_hash=")

    dynamic = data / manifest["episodes"][2]["path"]
    traj = tmp_path / "track" / "traj.json"
    assert run("track", "--config", config_file, "--checkpoint", encoder, "--episode", dynamic, "--init-from-gt", "--out", traj) == 0
    doc = json.loads(traj.read_text())
    assert len(doc["frames"]) == small_config().sim.frame_count

    assert run("eval", "--config", config_file, "--trajectory", traj, "--episode", dynamic, "--out", tmp_path / "single") == 0
    assert run("eval", "--config", config_file, "--data", data, "--checkpoint", encoder, "--out", tmp_path / "bench") == 0
    report = json.loads((tmp_path / "bench" / "report.json").read_text())
    assert {"trained", "random", "zero_motion"} <= set(report["methods"])

    assert run("viz", "--config", config_file, "--checkpoint", encoder, "--episode", dynamic, "--out", tmp_path / "viz", "--dump-grids") == 0
    assert (tmp_path / "viz" / "frame000_pca.png").exists()
    assert (tmp_path / "viz" / "frame002_features.vxg").exists()


def test_same_seed_gives_identical_files(tmp_path, config_file):
    for name in ("a", "b"):
        assert run("gen", "--config", config_file, "--seed", 4, "--n-static", 2, "--n-dynamic", 0, "--out", tmp_path / name) == 0
        assert run("train", "--config", config_file, "--seed", 4, "--stages", "1", "--iters", 2,
                   "--data", tmp_path / name, "--out", tmp_path / name / "ckpt") == 0
    episode = "ep_0001_static/f1_c0_depth.raw"
    assert (tmp_path / "a" / episode).read_bytes() == (tmp_path / "b" / episode).read_bytes()
    assert (tmp_path / "a" / "ckpt" / "stage1_encoder.ckpt").read_bytes() == (tmp_path / "b" / "ckpt" / "stage1_encoder.ckpt").read_bytes()


def test_exit_codes(tmp_path, config_file):
    assert run("track", "--config", config_file, "--zero-motion", "--episode", tmp_path / "missing",
               "--init-from-gt", "--out", tmp_path / "t.json") == 3
    assert run("train", "--config", config_file, "--data", tmp_path / "nothing", "--out", tmp_path / "ckpt") == 3

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"temperature": 0}}))
    assert run("gen", "--config", bad, "--n-static", 1, "--n-dynamic", 0, "--out", tmp_path / "g") == 2
    with pytest.raises(SystemExit) as exc:
        run("gen", "--config", config_file)
    assert exc.value.code == 2


def test_training_without_dynamic_data_for_stage3_fails(tmp_path, config_file):
    data = tmp_path / "data"
    assert run("gen", "--config", config_file, "--n-static", 2, "--n-dynamic", 0, "--out", data) == 0
    assert run("train", "--config", config_file, "--data", data, "--out", tmp_path / "ckpt", "--iters", 1) == 3


def test_scoring_a_trajectory_against_a_missing_mover_exits_3(tmp_path, config_file):
    data = tmp_path / "data"
    assert run("gen", "--config", config_file, "--n-static", 1, "--n-dynamic", 1, "--out", data) == 0
    traj = tmp_path / "traj.json"
    dynamic = data / "ep_0001_dynamic"
    assert run("track", "--config", config_file, "--zero-motion", "--episode", dynamic, "--init-from-gt", "--out", traj) == 0

    static = data / "ep_0000_static"
    assert run("eval", "--config", config_file, "--trajectory", traj, "--episode", static, "--out", tmp_path / "s") == 3
    assert run("eval", "--config", config_file, "--trajectory", traj, "--episode", dynamic, "--object", 99, "--out", tmp_path / "d") == 3
