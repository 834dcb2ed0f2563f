# tests/test_result_aggregator.py
import numpy as np
import pytest

from agents.result_aggregator import ResultAggregator, iou_at, iou_curve, motion_split, split_scores, total_displacement
from models.errors import LengthMismatch
from models.schemas import Split
from tests.conftest import make_box


def straight_track(step: float, frames: int = 9):
    return [make_box(x=step * f) for f in range(frames)]


def test_perfect_tracking_curve_is_one():
    gt = straight_track(0.5)
    curve = iou_curve([gt], [gt])
    assert np.allclose(curve.values, 1.0)
    assert iou_at(curve, [2, 4, 6, 8]) == {"IOU@2": 1.0, "IOU@4": 1.0, "IOU@6": 1.0, "IOU@8": 1.0}


def test_iou_at_skips_frames_beyond_the_curve():
    gt = straight_track(0.0, frames=3)
    assert list(iou_at(iou_curve([gt], [gt]), [2, 4])) == ["IOU@2"]


def test_zero_motion_decays_on_moving_object():
    gt = straight_track(1.0)
    still = [gt[0]] * len(gt)
    curve = iou_curve([still], [gt])
    assert curve.values[0] == pytest.approx(1.0)
    assert curve.values[1] == pytest.approx(3.0 / 5.0)
    assert curve.values[8] == 0.0


def test_curve_averages_over_sequences():
    gt = straight_track(1.0)
    curve = iou_curve([gt, [gt[0]] * 9], [gt, gt])
    assert curve.per_sequence.shape == (2, 9)
    assert curve.at(1) == pytest.approx((1.0 + 0.6) / 2)


def test_length_mismatch():
    gt = straight_track(1.0)
    with pytest.raises(LengthMismatch):
        iou_curve([gt[:5]], [gt])
    with pytest.raises(LengthMismatch):
        iou_curve([gt], [])


def test_motion_split_by_total_displacement():
    tracks = [straight_track(0.0), straight_track(0.1), straight_track(1.0)]
    assert total_displacement(tracks[2]) == pytest.approx(8.0)
    split = motion_split(tracks, threshold=1.0)
    assert split[Split.STATIC] == [0, 1]
    assert split[Split.MOVING] == [2]
    assert split[Split.ALL] == [0, 1, 2]


def test_split_scores_omit_empty_splits():
    gt = straight_track(0.0)
    scores = split_scores([gt], [gt], [2, 8])
    assert set(scores) == {"all", "static"}
    assert scores["static"]["n_sequences"] == 1
    assert scores["all"]["IOU@8"] == pytest.approx(1.0)


def test_aggregator_counts_failed_frames():
    gt = straight_track(1.0, frames=3)
    agg = ResultAggregator(min_iou=0.5)
    summary = agg.aggregate(agg.frame_checks([gt[0]] * 3, gt))
    assert summary["total"] == 3
    assert summary["passed"] == 2
    assert [c["id"] for c in summary["failed_checks"]] == ["frame_2"]
