from typing import List, Optional, Sequence

import numpy as np

from engines.geometry import box_footprint
from models.data_models import Box3D

EDGE_TOL = 1e-12


def polygon_clip(subject: Sequence[Sequence[float]], clip: Sequence[Sequence[float]]) -> Optional[List[np.ndarray]]:
    """Sutherland-Hodgman clip of a polygon by a convex counter-clockwise polygon.

    Points on a clip edge count as inside, so coincident edges survive.
    Returns None when nothing is left.
    """

    def inside(p):
        return (cp2[0] - cp1[0]) * (p[1] - cp1[1]) - (cp2[1] - cp1[1]) * (p[0] - cp1[0]) >= -EDGE_TOL

    def intersection():
        dc = cp1 - cp2
        dp = s - e
        n1 = cp1[0] * cp2[1] - cp1[1] * cp2[0]
        n2 = s[0] * e[1] - s[1] * e[0]
        n3 = 1.0 / (dc[0] * dp[1] - dc[1] * dp[0])
        return np.array([(n1 * dp[0] - n2 * dc[0]) * n3, (n1 * dp[1] - n2 * dc[1]) * n3])

    output = [np.asarray(p, dtype=np.float64) for p in subject]
    clip = [np.asarray(p, dtype=np.float64) for p in clip]
    cp1 = clip[-1]
    for cp2 in clip:
        candidates, output = output, []
        if not candidates:
            return None
        s = candidates[-1]
        for e in candidates:
            if inside(e):
                if not inside(s):
                    output.append(intersection())
                output.append(e)
            elif inside(s):
                output.append(intersection())
            s = e
        cp1 = cp2
    return output or None


def poly_area(x: np.ndarray, y: np.ndarray) -> float:
    """Shoelace area"""
    return 0.5 * abs(float(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1))))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    poly = polygon_clip(box_footprint(a), box_footprint(b))
    if poly is None or len(poly) < 3:
        return 0.0
    pts = np.array(poly)
    return poly_area(pts[:, 0], pts[:, 1])


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = min(a.center[1] + a.dims[1] / 2.0, b.center[1] + b.dims[1] / 2.0)
    bottom = max(a.center[1] - a.dims[1] / 2.0, b.center[1] - b.dims[1] / 2.0)
    return max(0.0, top - bottom)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Oriented IOU of two yaw boxes: footprint polygon overlap times height overlap"""
    inter = bev_intersection_area(a, b) * vertical_overlap(a, b)
    union = float(np.prod(a.dims) + np.prod(b.dims)) - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def box_match(pred: Box3D, truth: Box3D, min_iou: float = 0.5) -> dict:
    iou = iou_3d(pred, truth)
    ok = iou >= min_iou
    return {"passed": ok, "reason": f"IOU {iou:.3f} >= {min_iou}" if ok else f"IOU {iou:.3f} < {min_iou}", "iou": iou}
