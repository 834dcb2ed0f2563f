"""
Reliability network g: a per-voxel two-layer MLP over feature differences,
trained with shuffle labels to score how likely a voxel's content is static.
"""

import math
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from engines.encoder import read_checkpoint, save_checkpoint
from models.data_models import VoxelGrid
from models.errors import CorruptCheckpoint, ShapeMismatch


class ReliabilityNet(nn.Module):
    """C -> hidden -> 1 fully-connected layers applied as 1x1x1 convolutions"""

    def __init__(self, channels: int, hidden: int, leaky_slope: float = 0.1):
        super().__init__()
        self.channels = channels
        self.hidden = hidden
        self.leaky_slope = leaky_slope
        self.fc1 = nn.Conv3d(channels, hidden, 1)
        self.fc2 = nn.Conv3d(hidden, 1, 1)

    def forward(self, diff: torch.Tensor) -> torch.Tensor:
        """Logits (N, 1, W, H, D); gradients never reach whatever produced diff"""
        if diff.dim() != 5 or diff.shape[1] != self.channels:
            raise ShapeMismatch(f"expected (N, {self.channels}, W, H, D) differences, got {tuple(diff.shape)}")
        return self.fc2(F.leaky_relu(self.fc1(diff.detach()), self.leaky_slope))

    def vector_logits(self, diffs: torch.Tensor) -> torch.Tensor:
        """Logits for a (P, C) batch of difference vectors"""
        x = diffs.T.reshape(1, self.channels, -1, 1, 1)
        return self.forward(x).reshape(-1)


def init_reliability(channels: int, hidden: int, seed: int) -> ReliabilityNet:
    net = ReliabilityNet(channels, hidden)
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for layer in (net.fc1, net.fc2):
            bound = math.sqrt(1.0 / layer.in_channels)
            layer.weight.uniform_(-bound, bound, generator=g)
            layer.bias.uniform_(-bound, bound, generator=g)
    return net


def reliability_forward(params: ReliabilityNet, diff: VoxelGrid) -> np.ndarray:
    """Per-voxel static probability (W, H, D) in (0, 1)"""
    if diff.channels != params.channels:
        raise ShapeMismatch(f"reliability net expects {params.channels} channels, grid has {diff.channels}")
    x = torch.from_numpy(np.ascontiguousarray(diff.data)).permute(3, 0, 1, 2).unsqueeze(0)
    with torch.no_grad():
        probs = torch.sigmoid(params(x.to(next(params.parameters()).dtype)))
    return probs[0, 0].to(torch.float32).numpy()


def make_reliability_labels(
    map_i: VoxelGrid,
    map_j: VoxelGrid,
    seed: Union[int, np.random.Generator],
) -> Tuple[VoxelGrid, VoxelGrid]:
    """(M_i - M_j, M_i - shuffle(M_j)); the shuffle permutes voxel positions, keeping vectors intact"""
    if map_i.data.shape != map_j.data.shape:
        raise ShapeMismatch(f"maps differ in shape: {map_i.data.shape} vs {map_j.data.shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    c = map_j.channels
    flat_j = map_j.data.reshape(-1, c)
    shuffled = flat_j[rng.permutation(len(flat_j))].reshape(map_j.data.shape)
    positive = VoxelGrid(map_i.spec, map_i.data - map_j.data)
    negative = VoxelGrid(map_i.spec, map_i.data - shuffled)
    return positive, negative


def reliability_accuracy(params: ReliabilityNet, positives: np.ndarray, negatives: np.ndarray) -> float:
    """Fraction of (P, C) difference vectors classified correctly at probability 0.5"""
    with torch.no_grad():
        pos = params.vector_logits(torch.as_tensor(positives, dtype=torch.float32))
        neg = params.vector_logits(torch.as_tensor(negatives, dtype=torch.float32))
    correct = int((pos > 0).sum()) + int((neg <= 0).sum())
    return correct / (len(pos) + len(neg))


def save_reliability(path: Path, net: ReliabilityNet, step: int = 0, extra: Optional[dict] = None) -> None:
    spec = {"channels": net.channels, "hidden": net.hidden, "leaky_slope": net.leaky_slope}
    save_checkpoint(path, net, "reliability", spec, step, extra)


def load_reliability(path: Path) -> Tuple[ReliabilityNet, dict]:
    header, state = read_checkpoint(path, kind="reliability")
    try:
        spec = header["spec"]
        net = ReliabilityNet(int(spec["channels"]), int(spec["hidden"]), float(spec["leaky_slope"]))
        net.load_state_dict(state)
    except (ValueError, RuntimeError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"checkpoint does not match its spec: {e}", str(path))
    return net, header
