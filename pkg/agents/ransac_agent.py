from typing import Tuple, Union

import numpy as np

from engines.geometry import fit_rigid_least_squares
from models.data_models import RigidTransform
from models.errors import DegenerateConfiguration, ShapeMismatch
from utils.logger import get_logger

logger = get_logger(__name__)

MINIMAL_SAMPLE = 3


def residuals(t: RigidTransform, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(t.apply(src) - dst, axis=1)


def estimate_rigid_ransac(
    src: np.ndarray,
    dst: np.ndarray,
    iters: int = 256,
    inlier_threshold: float = 0.25,
    seed: Union[int, np.random.Generator] = 0,
) -> Tuple[RigidTransform, np.ndarray]:
    """Best-consensus rigid transform, refit on its inliers.

    The refit replaces the winning minimal-sample hypothesis only when it keeps
    at least as many inliers.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ShapeMismatch(f"correspondences must be matching (N, 3) arrays, got {src.shape} and {dst.shape}")
    n = len(src)
    if n < MINIMAL_SAMPLE:
        raise DegenerateConfiguration(f"RANSAC needs at least {MINIMAL_SAMPLE} correspondences, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    best, best_count = None, -1
    for _ in range(iters):
        sample = rng.choice(n, size=MINIMAL_SAMPLE, replace=False)
        try:
            hypothesis = fit_rigid_least_squares(src[sample], dst[sample])
        except DegenerateConfiguration:
            continue
        count = int(np.count_nonzero(residuals(hypothesis, src, dst) <= inlier_threshold))
        if count > best_count:
            best, best_count = hypothesis, count
    if best is None:
        raise DegenerateConfiguration(f"all {iters} minimal samples were collinear")

    inliers = residuals(best, src, dst) <= inlier_threshold
    if inliers.sum() >= MINIMAL_SAMPLE:
        try:
            refit = fit_rigid_least_squares(src[inliers], dst[inliers])
            refit_inliers = residuals(refit, src, dst) <= inlier_threshold
            if refit_inliers.sum() >= best_count:
                return refit, refit_inliers
        except DegenerateConfiguration:
            logger.debug("inlier set is collinear, keeping the minimal-sample hypothesis")
    return best, inliers
