"""
Object templates and soft spatial argmax relocation of template features
inside a search-region feature map.
"""

from typing import Optional

import numpy as np
from scipy.special import softmax

from engines.geometry import points_in_box
from engines.voxel_engine import trilinear_sample, voxel_centers
from models.data_models import Box3D, ObjectTemplate, VoxelGrid
from models.errors import EmptyTemplate, ShapeMismatch

ARGMAX_CHUNK = 64


def grid_coordinates(spec) -> np.ndarray:
    """(N, 3) integer coordinates of every voxel in flat (W, H, D) order"""
    idx = np.meshgrid(*[np.arange(r) for r in spec.resolution], indexing="ij")
    return np.stack(idx, axis=-1).reshape(-1, 3).astype(np.float64)


def extract_template(
    map0: VoxelGrid,
    box: Box3D,
    input0: Optional[VoxelGrid] = None,
    all_in_box: bool = False,
) -> ObjectTemplate:
    """Voxels of the frame-0 map whose centres fall in the yawed box.

    Unless all_in_box is set, only voxels occupied in input0 are kept.
    """
    spec = map0.spec
    inside = points_in_box(box, voxel_centers(spec).reshape(-1, 3))
    if not all_in_box and input0 is not None:
        if input0.spec.resolution != spec.resolution:
            raise ShapeMismatch("input grid and feature map must share a resolution")
        inside &= input0.occupancy.reshape(-1) > 0
    flat = np.flatnonzero(inside)
    if len(flat) == 0:
        raise EmptyTemplate(f"no voxels inside box at {box.center.tolist()}")
    coords = np.stack(np.unravel_index(flat, spec.resolution), axis=1).astype(np.int64)
    features = map0.data.reshape(-1, map0.channels)[flat].astype(np.float64)
    return ObjectTemplate(coords, features, box, spec)


def soft_argmax_correspond(m_i: np.ndarray, search_map: VoxelGrid, sharpness: float = 1.0) -> np.ndarray:
    """Softmax-weighted mean voxel coordinate; sharpness 1 uses raw dot products"""
    flat = search_map.data.reshape(-1, search_map.channels).astype(np.float64)
    weights = softmax(sharpness * (flat @ np.asarray(m_i, dtype=np.float64)))
    return weights @ grid_coordinates(search_map.spec)


def soft_argmax_batch(features: np.ndarray, search_map: VoxelGrid, sharpness: float = 1.0) -> np.ndarray:
    """soft_argmax_correspond for a (P, C) stack of template features, returns (P, 3)"""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != search_map.channels:
        raise ShapeMismatch(f"template features {features.shape} do not match {search_map.channels} channels")
    flat = search_map.data.reshape(-1, search_map.channels).astype(np.float64)
    coords = grid_coordinates(search_map.spec)
    out = np.empty((len(features), 3))
    for start in range(0, len(features), ARGMAX_CHUNK):
        chunk = features[start:start + ARGMAX_CHUNK]
        weights = softmax(sharpness * (chunk @ flat.T), axis=1)
        out[start:start + ARGMAX_CHUNK] = weights @ coords
    return out


def match_confidence(features: np.ndarray, search_map: VoxelGrid, coords: np.ndarray) -> float:
    """Mean similarity between template features and the map read at their relocated coordinates"""
    res = np.array(search_map.spec.resolution) - 1
    sims = [
        float(np.dot(trilinear_sample(search_map, np.clip(c, 0, res)), m))
        for m, c in zip(np.asarray(features, dtype=np.float64), coords)
    ]
    return float(np.mean(sims)) if sims else 0.0
