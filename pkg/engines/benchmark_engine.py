"""
Tracking benchmark: every mover of every dynamic episode, tracked by each
method, scored as IOU@N with a static/moving split.
"""

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from agents.result_aggregator import split_scores
from engines.encoder import NeuralMapper, init_encoder
from engines.tracking_engine import track_sequence
from models.data_models import Box3D, Episode
from models.errors import DataMissing, IoError
from models.schemas import Method, RunConfig
from utils.logger import get_logger

logger = get_logger(__name__)


def method_setup(method: Method, encoders: Dict[Method, Optional[NeuralMapper]], config: RunConfig) -> Tuple[Optional[NeuralMapper], RunConfig]:
    """Encoder and tracking config for one benchmark method"""
    trained = encoders.get(Method.TRAINED)
    if method == Method.ZERO_MOTION:
        return None, config
    if method == Method.RANDOM:
        return encoders.get(Method.RANDOM) or init_encoder(config.encoder, config.seed), config
    if method == Method.NO_SEARCH_REGION:
        return trained, config.model_copy(update={"track": config.track.model_copy(update={"use_search_region": False})})
    if method == Method.NO_SEARCH_REGION_HALF:
        track = config.track.model_copy(update={"use_search_region": False, "resolution_scale": 0.5})
        return trained, config.model_copy(update={"track": track})
    return encoders.get(method), config


def benchmark_methods(encoders: Dict[Method, Optional[NeuralMapper]], config: RunConfig) -> List[Method]:
    ablations = config.evaluation.run_ablations
    methods = [Method.RANDOM, Method.ZERO_MOTION]
    if encoders.get(Method.TRAINED) is not None:
        methods.insert(0, Method.TRAINED)
        if ablations:
            methods += [Method.NO_SEARCH_REGION, Method.NO_SEARCH_REGION_HALF]
    if ablations and encoders.get(Method.NO_STATIC_SELECTION) is not None:
        methods.append(Method.NO_STATIC_SELECTION)
    return methods


def sequences(episodes: Sequence[Episode]) -> List[Tuple[Episode, int]]:
    """(episode, mover index) for every mover with ground truth"""
    return [(ep, m) for ep in episodes for m in range(len(ep.mover_boxes[0]) if ep.mover_boxes else 0)]


def run_benchmark(
    encoders: Dict[Method, Optional[NeuralMapper]],
    episodes: Sequence[Episode],
    config: RunConfig,
    threads: int = 1,
) -> Dict[str, Any]:
    """IOU@N per method and split; sequences run in parallel, results reduce in input order"""
    seqs = sequences(episodes)
    if not seqs:
        raise DataMissing("benchmark needs at least one episode with ground-truth movers")
    ground_truths = [[frame[m] for frame in ep.mover_boxes] for ep, m in seqs]
    frames = config.evaluation.iou_frames

    report: Dict[str, Any] = {"seed": config.seed, "n_sequences": len(seqs), "methods": {}}
    for method in benchmark_methods(encoders, config):
        encoder, run_config = method_setup(method, encoders, config)

        def track(seq, encoder=encoder, run_config=run_config):
            episode, mover = seq
            return track_sequence(episode, episode.mover_boxes[0][mover], encoder, run_config)

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            states = list(pool.map(track, seqs))
        trajectories: List[List[Box3D]] = [s.boxes for s in states]
        scores = split_scores(trajectories, ground_truths, frames, config.evaluation.moving_threshold)
        scores["lost_frames"] = int(sum(sum(s.lost) for s in states))
        report["methods"][method.value] = scores
        logger.info("%s: %s", method.value, {k: round(v, 3) for k, v in scores["all"].items() if k.startswith("IOU@")})
    return report


def write_report(out_dir: Path, report: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> Tuple[Path, Path]:
    """report.json summary and report.csv rows (method, frame, mean_iou, split)"""
    out_dir = Path(out_dir)
    doc = dict(report)
    if extra:
        doc.update(extra)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "report.json"
        json_path.write_text(json.dumps(doc, sort_keys=True, indent=1))
        csv_path = out_dir / "report.csv"
        with open(csv_path, "w", newline="") as f:
            f.write("# " + " ".join(f"{k}={doc[k]}" for k in sorted(extra or {})) + "\n")
            writer = csv.writer(f)
            writer.writerow(["method", "frame", "mean_iou", "split"])
            for method in sorted(report["methods"]):
                for split, scores in sorted(report["methods"][method].items()):
                    if not isinstance(scores, dict):
                        continue
                    for frame, value in enumerate(scores["curve"]):
                        writer.writerow([method, frame, f"{value:.6f}", split])
    except OSError as e:
        raise IoError(f"cannot write report: {e}", str(out_dir))
    return json_path, csv_path
