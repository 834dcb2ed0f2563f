"""
Contrastive self-supervision over static points: correspondence sampling,
the momentum negative dictionary, the cross-entropy (InfoNCE) loss and the
top-1 retrieval metric used to monitor training.
"""

from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.special import logsumexp, softmax

from models.data_models import CorrespondencePair, VoxelGrid
from models.errors import EmptyDictionary, EmptyNegatives, NoCorrespondences, ShapeMismatch
from utils.logger import get_logger

logger = get_logger(__name__)

UNIT_TOL = 1e-5


class NegativeDictionary:
    """Fixed-capacity FIFO of unit feature vectors produced by the slow encoder"""

    def __init__(self, capacity: int, dim: int):
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buffer = np.zeros((self.capacity, self.dim), dtype=np.float32)
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, features: np.ndarray) -> None:
        features = np.asarray(features, dtype=np.float32)
        if features.ndim == 1:
            features = features[None]
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ShapeMismatch(f"dictionary holds {self.dim}-vectors, got {features.shape}")
        norms = np.linalg.norm(features.astype(np.float64), axis=1)
        unit = np.abs(norms - 1.0) <= UNIT_TOL
        if not unit.all():
            logger.warning("dropping %d non-unit features from dictionary push", int((~unit).sum()))
            features = features[unit]
        if len(features) > self.capacity:
            features = features[-self.capacity:]
        n = len(features)
        end = self._head + n
        if end <= self.capacity:
            self._buffer[self._head:end] = features
        else:
            split = self.capacity - self._head
            self._buffer[self._head:] = features[:split]
            self._buffer[:end - self.capacity] = features[split:]
        self._head = end % self.capacity
        self._size = min(self.capacity, self._size + n)

    def entries(self) -> np.ndarray:
        """Stored vectors, oldest first"""
        if self._size < self.capacity:
            return self._buffer[:self._size].copy()
        return np.concatenate([self._buffer[self._head:], self._buffer[:self._head]])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n vectors drawn uniformly with replacement"""
        if self._size == 0:
            raise EmptyDictionary("cannot sample negatives from an empty dictionary")
        return self._buffer[rng.integers(0, self._size, size=n)]


def dictionary_push(dictionary: NegativeDictionary, features: np.ndarray) -> NegativeDictionary:
    dictionary.push(features)
    return dictionary


def dictionary_sample(dictionary: NegativeDictionary, n: int, rng: np.random.Generator) -> np.ndarray:
    return dictionary.sample(n, rng)


def in_batch_negatives(keys: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """(P, k, C) negatives for each key row, drawn from the other rows only"""
    keys = np.asarray(keys)
    n = len(keys)
    if n < 2:
        raise EmptyNegatives("in-batch negatives need at least two keys")
    offsets = rng.integers(1, n, size=(n, k))
    return keys[(np.arange(n)[:, None] + offsets) % n]


def contrastive_loss(
    m_i: np.ndarray,
    m_j: np.ndarray,
    negatives: np.ndarray,
    tau: float,
    include_positive: bool = True,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Cross-entropy of the positive against dictionary negatives, with exact gradients.

    Returns (loss, dloss/dm_i, dloss/dm_j). With include_positive the
    denominator holds the positive term and the loss is never negative.
    """
    m_i = np.asarray(m_i, dtype=np.float64)
    m_j = np.asarray(m_j, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.size == 0:
        raise EmptyNegatives("contrastive loss needs at least one negative")
    negatives = negatives.reshape(-1, m_i.shape[0])
    if m_j.shape != m_i.shape:
        raise ShapeMismatch(f"positive pair shapes differ: {m_i.shape} vs {m_j.shape}")

    pos = m_i @ m_j / tau
    neg = negatives @ m_i / tau
    if include_positive:
        logits = np.concatenate([[pos], neg])
        loss = logsumexp(logits) - pos
        p = softmax(logits)
        grad_i = ((p[0] - 1.0) * m_j + p[1:] @ negatives) / tau
        grad_j = (p[0] - 1.0) * m_i / tau
    else:
        loss = logsumexp(neg) - pos
        q = softmax(neg)
        grad_i = (q @ negatives - m_j) / tau
        grad_j = -m_i / tau
    return float(loss), grad_i, grad_j


def info_nce_loss(
    queries: torch.Tensor,
    keys: torch.Tensor,
    negatives: torch.Tensor,
    tau: float,
    include_positive: bool = True,
) -> torch.Tensor:
    """Batched mean loss: queries and keys are (P, C), negatives (P, K, C)"""
    if negatives.shape[1] == 0:
        raise EmptyNegatives("contrastive loss needs at least one negative")
    pos = (queries * keys).sum(dim=1, keepdim=True) / tau
    neg = torch.einsum("pc,pkc->pk", queries, negatives) / tau
    if include_positive:
        logits = torch.cat([pos, neg], dim=1)
        labels = torch.zeros(len(logits), dtype=torch.long)
        return F.cross_entropy(logits, labels)
    return (torch.logsumexp(neg, dim=1) - pos.squeeze(1)).mean()


def correspondence_indices(
    input_i: VoxelGrid,
    input_j: VoxelGrid,
    static_mask: Optional[np.ndarray],
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(P, 3) voxel indices occupied in both registered views and flagged static"""
    if input_i.spec.resolution != input_j.spec.resolution:
        raise ShapeMismatch("views must be voxelized into the same grid")
    valid = (input_i.occupancy > 0) & (input_j.occupancy > 0)
    if static_mask is not None:
        static_mask = np.asarray(static_mask, dtype=bool)
        if static_mask.shape != valid.shape:
            raise ShapeMismatch(f"static mask {static_mask.shape} does not match grid {valid.shape}")
        valid &= static_mask
    idx = np.argwhere(valid)
    if len(idx) == 0:
        raise NoCorrespondences("no static surface voxel is observed in both views")
    pick = rng.choice(len(idx), size=min(n, len(idx)), replace=False)
    return idx[np.sort(pick)]


def sample_static_correspondences(
    input_i: VoxelGrid,
    input_j: VoxelGrid,
    static_mask: Optional[np.ndarray],
    n: int,
    rng: np.random.Generator,
    map_i: Optional[VoxelGrid] = None,
    map_j: Optional[VoxelGrid] = None,
) -> List[CorrespondencePair]:
    """Static surface points seen in two views voxelized into one world-registered grid.

    Both views share the grid, so a static point has the same voxel index in
    each; feature vectors are attached when the encoded maps are given.
    """
    idx = correspondence_indices(input_i, input_j, static_mask, n, rng)
    pairs = []
    for v in idx:
        key = tuple(int(c) for c in v)
        m_i = map_i.data[key].copy() if map_i is not None else None
        m_j = map_j.data[key].copy() if map_j is not None else None
        pairs.append(CorrespondencePair(key, key, m_i, m_j))
    return pairs


def retrieval_top1(
    map_i: VoxelGrid,
    map_j: VoxelGrid,
    input_i: VoxelGrid,
    input_j: VoxelGrid,
    queries: int,
    candidates: int,
    rng: np.random.Generator,
) -> float:
    """Fraction of query voxels whose true correspondent strictly beats every distractor.

    Each query voxel of view i is scored against its correspondent in view j and
    candidates - 1 other occupied voxels of view j.
    """
    idx = correspondence_indices(input_i, input_j, None, queries, rng)
    pool = np.argwhere(input_j.occupancy > 0)
    feats_i = map_i.data.astype(np.float64)
    feats_j = map_j.data.astype(np.float64)
    hits = 0
    for v in idx:
        others = pool[np.any(pool != v, axis=1)]
        k = min(candidates - 1, len(others))
        distractors = others[rng.choice(len(others), size=k, replace=False)] if k else np.zeros((0, 3), np.int64)
        query = feats_i[tuple(v)]
        true_score = query @ feats_j[tuple(v)]
        scores = feats_j[distractors[:, 0], distractors[:, 1], distractors[:, 2]] @ query
        hits += int(len(scores) == 0 or true_score > scores.max())
    return hits / len(idx)
