"""
Bird's-eye images of voxel grids: PCA colouring of feature maps and
occupancy, written as PNG.
"""

from pathlib import Path
from typing import Dict, Optional

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from models.data_models import VoxelGrid
from models.errors import DegenerateFeatures, IoError, ShapeMismatch
from utils.logger import get_logger

logger = get_logger(__name__)

RANK_TOL = 1e-8


def _minmax(channels: np.ndarray) -> np.ndarray:
    lo = channels.min(axis=0)
    span = channels.max(axis=0) - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (channels - lo) / safe, 0.0)


def birdseye_pca_image(feature_map: VoxelGrid, strict: bool = False) -> np.ndarray:
    """(W, D, 3) image in [0, 1] from the vertical mean of a feature map.

    Each cell's mean feature is projected onto the map's top three principal
    components. When the features span fewer than three directions the first
    three channels are used instead (or DegenerateFeatures is raised if strict).
    """
    c = feature_map.channels
    if c < 3:
        raise ShapeMismatch(f"PCA image needs at least 3 channels, got {c}")
    w, _, d = feature_map.spec.resolution
    cells = feature_map.data.astype(np.float64).mean(axis=1).reshape(w * d, c)
    centered = cells - cells.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > RANK_TOL * max(float(s[0]) if len(s) else 0.0, 1.0)))
    if rank < 3:
        if strict:
            raise DegenerateFeatures(f"feature covariance has rank {rank} < 3")
        logger.warning("DegenerateFeatures: covariance rank %d < 3, using the first channels", rank)
        projected = cells[:, :3]
    else:
        components = vt[:3]
        flip = np.sign(components[np.arange(3), np.abs(components).argmax(axis=1)])
        projected = centered @ (components * flip[:, None]).T
    return _minmax(projected).reshape(w, d, 3)


def birdseye_occupancy_image(input_grid: VoxelGrid) -> np.ndarray:
    """(W, D) max occupancy along the vertical axis"""
    return input_grid.occupancy.max(axis=1).astype(np.float64)


def save_png(path: Path, image: np.ndarray, meta: Optional[Dict[str, object]] = None) -> Path:
    """Write a [0, 1] grayscale or RGB image as 8-bit PNG; meta lands in text chunks"""
    path = Path(path)
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    info = PngInfo()
    for key in sorted(meta or {}):
        info.add_text(key, str(meta[key]))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PNG", pnginfo=info)
    except OSError as e:
        raise IoError(f"cannot write image: {e}", str(path))
    return path
