import csv
import time
from functools import wraps
from pathlib import Path
from typing import Optional

from utils.logger import get_logger

logger = get_logger(__name__)

METRICS_FIELDS = ["iteration", "stage", "loss", "retrieval_top1"]


def track_time(func):
    @wraps(func)
    def wrapper(*args, **kwargs):
        start = time.time()
        result = func(*args, **kwargs)
        duration = time.time() - start
        logger.debug("%s: %.2fs", func.__name__, duration)
        return result
    return wrapper


class MetricsLog:
    """Training metrics as CSV rows; the first line is a comment carrying config hash and seed"""

    def __init__(self, path: Optional[Path], config_hash: str = "", seed: int = 0):
        self.path = Path(path) if path else None
        self.rows = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as f:
                f.write(f"# config_hash={config_hash} seed={seed}\n")
                csv.writer(f).writerow(METRICS_FIELDS)

    def record(self, iteration: int, stage: str, loss: float, retrieval_top1: Optional[float] = None):
        row = [iteration, stage, f"{loss:.6f}", "" if retrieval_top1 is None else f"{retrieval_top1:.4f}"]
        self.rows.append({"iteration": iteration, "stage": stage, "loss": loss, "retrieval_top1": retrieval_top1})
        if self.path:
            with open(self.path, "a", newline="") as f:
                csv.writer(f).writerow(row)
