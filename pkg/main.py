import argparse
import json
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from agents.reliability_agent import load_reliability
from agents.result_aggregator import ResultAggregator, iou_at, iou_curve
from agents.visualization_agent import birdseye_occupancy_image, birdseye_pca_image, save_png
from engines.benchmark_engine import run_benchmark, write_report
from engines.encoder import configure_torch, init_encoder, load_encoder
from engines.scene_engine import episode_seeds, generate_episodes
from engines.schema_engine import SchemaEngine
from engines.tracking_engine import encode_frame, track_sequence
from engines.training_engine import TrainingEngine
from engines.voxel_engine import make_search_region, save_voxel_grid, scene_spec
from models.data_models import Box3D
from models.errors import DataMissing, TrackerError
from models.schemas import EpisodeKind, Method
from utils.data_loader import load_dataset, load_manifest, read_episode, read_trajectory, write_episode, write_manifest, write_trajectory
from utils.logger import configure_logging, failure, info, log_complete, log_start, section, success
from utils.metrics import MetricsLog

USAGE_EXIT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="n3dt", description="Self-supervised 3D feature learning and rigid object tracking")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default="config/desk_config.json", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--threads", type=int, default=None, help="Worker and torch thread cap; 1 is bit-deterministic")
    common.add_argument("--log-level", type=str, default="INFO", help="Logging level")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="Generate a synthetic episode dataset")
    gen.add_argument("--n-static", type=int, required=True, help="Number of static episodes")
    gen.add_argument("--n-dynamic", type=int, required=True, help="Number of dynamic episodes")
    gen.add_argument("--out", type=Path, required=True, help="Dataset directory")

    train = sub.add_parser("train", parents=[common], help="Run training stages 1-3")
    train.add_argument("--data", type=Path, required=True, help="Dataset directory with manifest.json")
    train.add_argument("--out", type=Path, required=True, help="Checkpoint directory")
    train.add_argument("--stages", type=str, default="1,2,3", help="Comma-separated stages to run")
    train.add_argument("--iters", type=int, default=None, help="Iterations for every selected stage")
    train.add_argument("--init", type=Path, default=None, help="Encoder checkpoint to start from")
    train.add_argument("--reliability", type=Path, default=None, help="Reliability checkpoint for stage 3")

    track = sub.add_parser("track", parents=[common], help="Track one object through an episode")
    track.add_argument("--episode", type=Path, required=True, help="Episode directory")
    track.add_argument("--out", type=Path, required=True, help="Trajectory JSON path (CSV written alongside)")
    enc = track.add_mutually_exclusive_group(required=True)
    enc.add_argument("--checkpoint", type=Path, help="Encoder checkpoint")
    enc.add_argument("--random-features", action="store_true", help="Use the untrained seeded encoder")
    enc.add_argument("--zero-motion", action="store_true", help="Report the initial box at every frame")
    init = track.add_mutually_exclusive_group(required=True)
    init.add_argument("--box", type=Path, help="JSON file with center, dims, yaw")
    init.add_argument("--init-from-gt", action="store_true", help="Use the ground-truth frame-0 box")
    track.add_argument("--object", type=int, default=0, help="Mover index for --init-from-gt")

    ev = sub.add_parser("eval", parents=[common], help="Benchmark checkpoints or score a trajectory")
    ev.add_argument("--out", type=Path, required=True, help="Report directory")
    ev.add_argument("--data", type=Path, help="Dataset directory; benchmarks its dynamic episodes")
    ev.add_argument("--checkpoint", type=Path, help="Trained encoder checkpoint")
    ev.add_argument("--no-static-selection-checkpoint", type=Path, help="Encoder finetuned without static selection")
    ev.add_argument("--trajectory", type=Path, help="Trajectory file to score instead of benchmarking")
    ev.add_argument("--episode", type=Path, help="Ground-truth episode for --trajectory")
    ev.add_argument("--object", type=int, default=0, help="Mover index for --trajectory")

    viz = sub.add_parser("viz", parents=[common], help="Bird's-eye occupancy and PCA feature images per frame")
    viz.add_argument("--checkpoint", type=Path, required=True, help="Encoder checkpoint")
    viz.add_argument("--episode", type=Path, required=True, help="Episode directory")
    viz.add_argument("--out", type=Path, required=True, help="Image directory")
    viz.add_argument("--object", type=int, default=None, help="Centre a search region on this mover instead of the scene grid")
    viz.add_argument("--dump-grids", action="store_true", help="Also write feature maps as .vxg")
    return parser


def cmd_gen(args, engine: SchemaEngine) -> Dict[str, object]:
    config = engine.config
    meta = {"config_hash": engine.config_hash, "seed": config.seed}
    episodes = generate_episodes(args.n_static, args.n_dynamic, config.seed, config.sim, config.threads)
    seeds = episode_seeds(config.seed, len(episodes))
    entries = []
    for i, (episode, seed) in enumerate(zip(episodes, seeds)):
        kind = EpisodeKind.STATIC if episode.is_static else EpisodeKind.DYNAMIC
        name = f"ep_{i:04d}_{kind.value}"
        write_episode(args.out / name, episode, meta)
        entries.append({"path": name, "static": episode.is_static, "seed": seed})
    write_manifest(args.out, entries, meta)
    success(f"{len(entries)} episodes written to {args.out}")
    return {"episodes": len(entries)}


def parse_stages(text: str) -> List[int]:
    try:
        stages = sorted({int(s) for s in text.split(",") if s.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid --stages {text!r}")
    if not stages or any(s not in (1, 2, 3) for s in stages):
        raise argparse.ArgumentTypeError(f"--stages must list stages from 1,2,3, got {text!r}")
    return stages


def cmd_train(args, engine: SchemaEngine) -> Dict[str, object]:
    stages = parse_stages(args.stages)
    config = engine.config
    if args.iters is not None:
        config = engine.override(train={f"stage{s}_iterations": args.iters for s in stages})
    meta = {"config_hash": engine.config_hash, "seed": config.seed}

    manifest = load_manifest(args.data)
    static = [read_episode(args.data / e["path"]) for e in manifest if e["static"]]
    dynamic = [read_episode(args.data / e["path"]) for e in manifest if not e["static"]] if 3 in stages else []

    encoder = load_encoder(args.init)[0] if args.init else None
    if encoder is None and 1 not in stages:
        previous = args.out / "stage1_encoder.ckpt"
        if not previous.exists():
            raise DataMissing("stages 2-3 need an encoder: pass --init or run stage 1 first", str(previous))
        encoder = load_encoder(previous)[0]
    reliability = load_reliability(args.reliability)[0] if args.reliability else None
    if reliability is None and 3 in stages and 2 not in stages and config.train.use_static_selection:
        previous = args.out / "stage2_reliability.ckpt"
        if not previous.exists():
            raise DataMissing("stage 3 needs a reliability network: pass --reliability or run stage 2", str(previous))
        reliability = load_reliability(previous)[0]

    metrics = MetricsLog(args.out / "metrics.csv", meta["config_hash"], config.seed)
    trainer = TrainingEngine(config, metrics, show_progress=True)
    result = trainer.run_curriculum(static, dynamic, stages, encoder, reliability, args.out, meta)
    for path in result["checkpoints"]:
        success(f"checkpoint {path}")
    return {"checkpoints": len(result["checkpoints"])}


def load_box(path: Path) -> Box3D:
    try:
        return Box3D.from_dict(json.loads(Path(path).read_text()))
    except OSError as e:
        raise DataMissing(f"cannot read box: {e}", str(path))
    except (ValueError, KeyError, TypeError) as e:
        raise DataMissing(f"malformed box file: {e}", str(path))


def ground_truth_box(episode, index: int, frame: int = 0) -> Box3D:
    if not episode.mover_boxes or not 0 <= index < len(episode.mover_boxes[frame]):
        raise DataMissing(f"episode has no mover {index}")
    return episode.mover_boxes[frame][index]


def cmd_track(args, engine: SchemaEngine) -> Dict[str, object]:
    config = engine.config
    episode = read_episode(args.episode)
    box0 = load_box(args.box) if args.box else ground_truth_box(episode, args.object)
    if args.zero_motion:
        encoder = None
    elif args.random_features:
        encoder = init_encoder(config.encoder, config.seed)
    else:
        encoder = load_encoder(args.checkpoint)[0]
    state = track_sequence(episode, box0, encoder, config)
    write_trajectory(args.out, state, {"config_hash": engine.config_hash, "seed": config.seed})
    lost = sum(state.lost)
    (failure if lost else success)(f"{len(state.boxes)} frames tracked, {lost} lost")
    return {"frames": len(state.boxes), "lost": lost}


def cmd_eval(args, engine: SchemaEngine) -> Dict[str, object]:
    config = engine.config
    meta = {"config_hash": engine.config_hash, "seed": config.seed}
    if args.trajectory:
        if not args.episode:
            raise DataMissing("--trajectory needs --episode for ground truth")
        boxes, _ = read_trajectory(args.trajectory)
        episode = read_episode(args.episode)
        truth = [ground_truth_box(episode, args.object, f) for f in range(episode.frame_count)]
        curve = iou_curve([boxes], [truth])
        aggregator = ResultAggregator()
        summary = aggregator.aggregate(aggregator.frame_checks(boxes, truth))
        report = {"methods": {"trajectory": {"all": {"n_sequences": 1, "curve": curve.values.tolist(), **iou_at(curve, config.evaluation.iou_frames)}}},
                  "checks": summary, "seed": config.seed, "n_sequences": 1}
    else:
        if not args.data or not args.checkpoint:
            raise DataMissing("benchmark needs --data and --checkpoint")
        encoders = {Method.TRAINED: load_encoder(args.checkpoint)[0], Method.RANDOM: init_encoder(config.encoder, config.seed)}
        if args.no_static_selection_checkpoint:
            encoders[Method.NO_STATIC_SELECTION] = load_encoder(args.no_static_selection_checkpoint)[0]
        episodes = load_dataset(args.data, static=False)
        report = run_benchmark(encoders, episodes, config, config.threads)
    json_path, csv_path = write_report(args.out, report, meta)
    for method, scores in report["methods"].items():
        info(f"{method}: " + ", ".join(f"{k}={v:.3f}" for k, v in scores["all"].items() if k.startswith("IOU@")))
    success(f"report written to {json_path} and {csv_path}")
    return {"methods": len(report["methods"])}


def cmd_viz(args, engine: SchemaEngine) -> Dict[str, object]:
    config = engine.config
    meta = {"config_hash": engine.config_hash, "seed": config.seed}
    encoder = load_encoder(args.checkpoint)[0]
    episode = read_episode(args.episode)
    for frame in range(episode.frame_count):
        if args.object is None:
            spec = scene_spec(config.grid)
        else:
            spec = make_search_region(ground_truth_box(episode, args.object, frame).center, config=config.grid)
        grid, features = encode_frame(encoder, episode, frame, spec)
        save_png(args.out / f"frame{frame:03d}_occupancy.png", birdseye_occupancy_image(grid), meta)
        save_png(args.out / f"frame{frame:03d}_pca.png", birdseye_pca_image(features), meta)
        if args.dump_grids:
            save_voxel_grid(args.out / f"frame{frame:03d}_features.vxg", features, meta)
    success(f"{episode.frame_count} frames rendered to {args.out}")
    return {"frames": episode.frame_count}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "track": cmd_track, "eval": cmd_eval, "viz": cmd_viz}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        engine = SchemaEngine(args.config)
        engine.override(seed=args.seed, threads=args.threads)
    except ValidationError as e:
        failure(f"invalid configuration: {e}")
        return USAGE_EXIT
    except TrackerError as e:
        failure(str(e))
        return e.exit_code
    config = engine.config
    configure_torch(config.seed, config.threads)

    section(f"n3dt {args.command}")
    log_start(args.command, config.seed, engine.config_hash)
    start = time.time()
    try:
        COMMANDS[args.command](args, engine)
    except argparse.ArgumentTypeError as e:
        failure(str(e))
        log_complete(args.command, time.time() - start, "USAGE")
        return USAGE_EXIT
    except TrackerError as e:
        failure(f"{type(e).__name__}: {e}")
        log_complete(args.command, time.time() - start, type(e).__name__)
        return e.exit_code
    log_complete(args.command, time.time() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
