from typing import Any, Dict, List, Sequence

import numpy as np

from agents.compare import box_match, iou_3d
from models.data_models import Box3D, IouCurve
from models.errors import LengthMismatch
from models.schemas import Split


def iou_curve(trajectories: Sequence[Sequence[Box3D]], ground_truths: Sequence[Sequence[Box3D]]) -> IouCurve:
    """Mean IOU per frame index over equally long sequences"""
    if len(trajectories) != len(ground_truths):
        raise LengthMismatch(f"{len(trajectories)} trajectories but {len(ground_truths)} ground truths")
    if not trajectories:
        raise LengthMismatch("no sequences to evaluate")
    lengths = {len(t) for t in trajectories} | {len(g) for g in ground_truths}
    if len(lengths) != 1:
        raise LengthMismatch(f"sequence lengths differ: {sorted(lengths)}")
    per_sequence = np.array([[iou_3d(p, g) for p, g in zip(traj, gt)] for traj, gt in zip(trajectories, ground_truths)])
    frames = np.arange(per_sequence.shape[1])
    return IouCurve(frames, per_sequence.mean(axis=0), per_sequence)


def iou_at(curve: IouCurve, frames: Sequence[int]) -> Dict[str, float]:
    """{"IOU@N": value} for every requested frame the curve reaches"""
    return {f"IOU@{n}": curve.at(n) for n in frames if n < len(curve.values)}


def total_displacement(ground_truth: Sequence[Box3D]) -> float:
    centers = np.array([b.center for b in ground_truth])
    return float(np.linalg.norm(np.diff(centers, axis=0), axis=1).sum()) if len(centers) > 1 else 0.0


def motion_split(ground_truths: Sequence[Sequence[Box3D]], threshold: float = 1.0) -> Dict[Split, List[int]]:
    """Sequence indices whose object travels less than threshold meters (static) or more (moving)"""
    moved = [total_displacement(gt) for gt in ground_truths]
    return {
        Split.ALL: list(range(len(moved))),
        Split.STATIC: [i for i, d in enumerate(moved) if d < threshold],
        Split.MOVING: [i for i, d in enumerate(moved) if d >= threshold],
    }


def split_scores(
    trajectories: Sequence[Sequence[Box3D]],
    ground_truths: Sequence[Sequence[Box3D]],
    frames: Sequence[int],
    threshold: float = 1.0,
) -> Dict[str, Dict[str, Any]]:
    """IOU@N and the full curve for the all/static/moving splits; empty splits are omitted"""
    out = {}
    for split, idx in motion_split(ground_truths, threshold).items():
        if not idx:
            continue
        curve = iou_curve([trajectories[i] for i in idx], [ground_truths[i] for i in idx])
        out[split.value] = {"n_sequences": len(idx), "curve": curve.values.tolist(), **iou_at(curve, frames)}
    return out


class ResultAggregator:
    """Per-frame box checks rolled up into a pass/fail summary"""

    def __init__(self, min_iou: float = 0.5):
        self.min_iou = min_iou

    def frame_checks(self, trajectory: Sequence[Box3D], ground_truth: Sequence[Box3D]) -> List[Dict[str, Any]]:
        if len(trajectory) != len(ground_truth):
            raise LengthMismatch(f"trajectory has {len(trajectory)} frames, ground truth {len(ground_truth)}")
        return [dict(box_match(p, g, self.min_iou), id=f"frame_{f}") for f, (p, g) in enumerate(zip(trajectory, ground_truth))]

    def aggregate(self, checks: List[Dict[str, Any]]) -> Dict[str, Any]:
        passed = sum(1 for c in checks if c["passed"])
        return {
            "total": len(checks),
            "passed": passed,
            "failed": len(checks) - passed,
            "failed_checks": [{"id": c["id"], "reason": c["reason"]} for c in checks if not c["passed"]],
        }
