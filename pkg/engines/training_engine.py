"""
Three-stage self-supervised training.

  1. contrastive encoder training on static episodes
  2. reliability network on shuffle labels, encoder frozen
  3. contrastive finetuning on dynamic episodes, correspondences filtered by g

Stages 2-3 repeat for `curriculum_passes`.
"""

from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from agents.contrastive_agent import (
    NegativeDictionary,
    correspondence_indices,
    in_batch_negatives,
    info_nce_loss,
    retrieval_top1,
)
from agents.reliability_agent import (
    ReliabilityNet,
    init_reliability,
    make_reliability_labels,
    reliability_forward,
    save_reliability,
)
from engines.encoder import (
    NeuralMapper,
    adam_step,
    forward_encoder,
    grid_to_tensor,
    init_encoder,
    make_optim_state,
    momentum_update,
    save_encoder,
    slow_copy,
)
from engines.scene_engine import mover_occupancy
from engines.voxel_engine import scene_spec, voxelize_rgbd
from models.data_models import Episode, VoxelGrid
from models.errors import DataMissing, NoCorrespondences
from models.schemas import RunConfig
from utils.logger import get_logger, progress
from utils.metrics import MetricsLog, track_time

logger = get_logger(__name__)

View = Tuple[int, int]  # (frame, camera)
GridKey = Tuple[int, bool, int, int]


class TrainingEngine:
    def __init__(self, config: RunConfig, metrics: Optional[MetricsLog] = None, show_progress: bool = False):
        self.config = config
        self.train = config.train
        self.spec = scene_spec(config.grid)
        self.rng = np.random.default_rng(config.seed)
        self.eval_rng_seed = [config.seed, 1]
        self.metrics = metrics or MetricsLog(None)
        self.show_progress = show_progress
        self.iteration = 0
        self.slow: Optional[NeuralMapper] = None
        self.dictionary: Optional[NegativeDictionary] = None
        self._grids: "OrderedDict[GridKey, VoxelGrid]" = OrderedDict()

    def view_grid(self, episode: Episode, view: View) -> VoxelGrid:
        """Single-camera input grid in the world-fixed scene spec, LRU-cached by episode seed and view"""
        frame, cam = view
        key = (episode.scene.seed, episode.is_static, frame, cam)
        grid = self._grids.get(key)
        if grid is not None:
            self._grids.move_to_end(key)
            return grid
        camera = episode.cameras[frame][cam]
        grid = voxelize_rgbd(episode.rgb[frame][cam], episode.depth[frame][cam], camera.intrinsics, camera.pose, self.spec)
        if self.train.grid_cache_size > 0:
            self._grids[key] = grid
            while len(self._grids) > self.train.grid_cache_size:
                self._grids.popitem(last=False)
        return grid

    def _pick_views(self, episodes: Sequence[Episode], same_frame: bool) -> Tuple[Episode, View, View]:
        episode = episodes[int(self.rng.integers(len(episodes)))]
        cams = episode.camera_count
        f_i = int(self.rng.integers(episode.frame_count))
        f_j = f_i if same_frame else int(self.rng.integers(episode.frame_count))
        c_i = int(self.rng.integers(cams))
        c_j = int(self.rng.integers(cams))
        if cams > 1 and c_i == c_j:
            c_j = (c_i + 1 + int(self.rng.integers(cams - 1))) % cams
        return episode, (f_i, c_i), (f_j, c_j)

    def _ensure_momentum_state(self, encoder: NeuralMapper):
        if self.slow is None or self.slow.spec != encoder.spec:
            self.slow = slow_copy(encoder)
            self.dictionary = NegativeDictionary(self.train.dictionary_capacity, encoder.spec.feature_dim)

    def _contrastive_step(self, encoder: NeuralMapper, optim, batch) -> Optional[float]:
        """One Adam step over (input_i, input_j, voxel indices) view pairs; None when no pair is usable"""
        train = self.train
        queries, keys = [], []
        for input_i, input_j, idx in batch:
            ii, jj, kk = (torch.from_numpy(idx[:, a]) for a in range(3))
            q_map = encoder(grid_to_tensor(input_i))[0]
            with torch.no_grad():
                k_map = self.slow(grid_to_tensor(input_j))[0]
            queries.append(q_map[:, ii, jj, kk].T)
            keys.append(k_map[:, ii, jj, kk].T)
        if not queries:
            return None
        q = torch.cat(queries)
        k = torch.cat(keys)

        if len(self.dictionary) == 0:
            # empty dictionary: negatives come from the other keys of this batch
            if len(k) < 2:
                return None
            negatives = in_batch_negatives(k.numpy(), train.negatives_per_positive, self.rng)
        else:
            negatives = self.dictionary.sample(len(q) * train.negatives_per_positive, self.rng)
        negatives = torch.from_numpy(negatives).to(q.dtype).reshape(len(q), train.negatives_per_positive, -1)
        loss = info_nce_loss(q, k, negatives, train.temperature, train.include_positive_in_denominator)

        params = list(encoder.parameters())
        grads = torch.autograd.grad(loss, params)
        adam_step(params, grads, optim)
        momentum_update(self.slow, encoder, train.momentum)
        self.dictionary.push(k.numpy())
        return float(loss.detach())

    def _contrastive_loop(
        self,
        stage: str,
        episodes: Sequence[Episode],
        encoder: NeuralMapper,
        iterations: int,
        same_frame: bool,
        mask_fn,
        holdout: Sequence[Episode] = (),
    ) -> NeuralMapper:
        train = self.train
        self._ensure_momentum_state(encoder)
        optim = make_optim_state(encoder.parameters(), train.learning_rate, train.adam_betas, train.adam_eps)
        with progress() as bar:
            task = bar.add_task(stage, total=iterations, visible=self.show_progress)
            for it in range(1, iterations + 1):
                batch = []
                for _ in range(train.views_per_batch):
                    episode, vi, vj = self._pick_views(episodes, same_frame)
                    input_i, input_j = self.view_grid(episode, vi), self.view_grid(episode, vj)
                    try:
                        mask = mask_fn(episode, vi, vj, input_i, input_j)
                        idx = correspondence_indices(input_i, input_j, mask, train.pairs_per_batch, self.rng)
                    except NoCorrespondences as e:
                        logger.warning("%s iteration %d: skipped view pair (%s)", stage, it, e)
                        continue
                    batch.append((input_i, input_j, idx))
                loss = self._contrastive_step(encoder, optim, batch) if batch else None
                self.iteration += 1
                if loss is not None:
                    top1 = self.retrieval(encoder, holdout) if holdout and it % train.eval_every == 0 else None
                    self.metrics.record(self.iteration, stage, loss, top1)
                bar.advance(task)
        return encoder

    @track_time
    def train_stage1(
        self,
        episodes: Sequence[Episode],
        encoder: Optional[NeuralMapper] = None,
        holdout: Sequence[Episode] = (),
        iterations: Optional[int] = None,
    ) -> NeuralMapper:
        if not episodes:
            raise DataMissing("stage 1 needs static episodes")
        encoder = encoder or init_encoder(self.config.encoder, self.config.seed)
        n = self.train.stage1_iterations if iterations is None else iterations
        return self._contrastive_loop("stage1", episodes, encoder, n, False, lambda *_: None, holdout)

    @track_time
    def train_stage2_reliability(
        self,
        episodes: Sequence[Episode],
        encoder: NeuralMapper,
        reliability: Optional[ReliabilityNet] = None,
        iterations: Optional[int] = None,
    ) -> ReliabilityNet:
        """Binary cross-entropy on (M_i - M_j) vs (M_i - shuffle(M_j)); the encoder only runs forward"""
        if not episodes:
            raise DataMissing("stage 2 needs static episodes")
        train = self.train
        net = reliability or init_reliability(encoder.spec.feature_dim, train.reliability_hidden, self.config.seed)
        optim = make_optim_state(net.parameters(), train.reliability_learning_rate, train.adam_betas, train.adam_eps)
        n = train.stage2_iterations if iterations is None else iterations
        with progress() as bar:
            task = bar.add_task("stage2", total=n, visible=self.show_progress)
            for _ in range(n):
                self.iteration += 1
                bar.advance(task)
                samples = self.reliability_samples(episodes, encoder)
                if samples is None:
                    continue
                pos, neg = samples
                diffs = torch.from_numpy(np.concatenate([pos, neg]))
                labels = torch.cat([torch.ones(len(pos)), torch.zeros(len(neg))])
                loss = F.binary_cross_entropy_with_logits(net.vector_logits(diffs), labels)
                params = list(net.parameters())
                adam_step(params, torch.autograd.grad(loss, params), optim)
                self.metrics.record(self.iteration, "stage2", float(loss.detach()))
        return net

    def reliability_samples(self, episodes: Sequence[Episode], encoder: NeuralMapper) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """Balanced positive and shuffled-negative difference vectors from one static view pair"""
        episode, vi, vj = self._pick_views(episodes, same_frame=False)
        input_i, input_j = self.view_grid(episode, vi), self.view_grid(episode, vj)
        try:
            idx = correspondence_indices(input_i, input_j, None, self.train.reliability_samples, self.rng)
        except NoCorrespondences as e:
            logger.warning("stage2: skipped view pair (%s)", e)
            return None
        map_i, map_j = forward_encoder(encoder, input_i), forward_encoder(encoder, input_j)
        positive, negative = make_reliability_labels(map_i, map_j, self.rng)
        at = tuple(idx.T)
        return positive.data[at], negative.data[at]

    def _reliability_mask(self, encoder: NeuralMapper, reliability: ReliabilityNet):
        threshold = self.train.reliability_threshold

        def mask(episode, vi, vj, input_i, input_j):
            if not self.train.use_static_selection:
                return None
            map_i, map_j = forward_encoder(encoder, input_i), forward_encoder(encoder, input_j)
            diff = VoxelGrid(self.spec, map_i.data - map_j.data)
            return reliability_forward(reliability, diff) >= threshold

        return mask

    def _oracle_mask(self, episode, vi, vj, input_i, input_j):
        return ~(mover_occupancy(episode, vi[0], self.spec) | mover_occupancy(episode, vj[0], self.spec))

    @track_time
    def train_stage3_finetune(
        self,
        episodes: Sequence[Episode],
        encoder: NeuralMapper,
        reliability: Optional[ReliabilityNet],
        holdout: Sequence[Episode] = (),
        iterations: Optional[int] = None,
        oracle: bool = False,
    ) -> NeuralMapper:
        """Stage-1 loop on dynamic episodes across frames, keeping voxels g deems static.

        oracle=True replaces g with the generator's ground-truth mover occupancy.
        """
        if not episodes:
            raise DataMissing("stage 3 needs dynamic episodes")
        mask_fn = self._oracle_mask if oracle else self._reliability_mask(encoder, reliability)
        n = self.train.stage3_iterations if iterations is None else iterations
        return self._contrastive_loop("stage3", episodes, encoder, n, False, mask_fn, holdout)

    def retrieval(self, encoder: NeuralMapper, episodes: Sequence[Episode], pairs: int = 4) -> float:
        """Mean top-1 retrieval over a fixed set of held-out static view pairs"""
        rng = np.random.default_rng(self.eval_rng_seed)
        scores = []
        for p in range(pairs):
            episode = episodes[p % len(episodes)]
            cams = episode.camera_count
            c_i = int(rng.integers(cams))
            vi, vj = (0, c_i), (0, (c_i + 1) % cams)
            input_i, input_j = self.view_grid(episode, vi), self.view_grid(episode, vj)
            try:
                scores.append(retrieval_top1(
                    forward_encoder(encoder, input_i), forward_encoder(encoder, input_j), input_i, input_j,
                    self.train.retrieval_queries, self.train.retrieval_candidates, rng,
                ))
            except NoCorrespondences:
                continue
        return float(np.mean(scores)) if scores else 0.0

    def run_curriculum(
        self,
        static: Sequence[Episode],
        dynamic: Sequence[Episode],
        stages: Sequence[int] = (1, 2, 3),
        encoder: Optional[NeuralMapper] = None,
        reliability: Optional[ReliabilityNet] = None,
        checkpoint_dir: Optional[Path] = None,
        extra: Optional[dict] = None,
    ) -> Dict[str, object]:
        """Stage 1 once, then stages 2-3 per curriculum pass; writes a checkpoint after each stage"""
        stages = sorted(set(stages))
        if 3 in stages and not dynamic:
            raise DataMissing("stage 3 requested but the dataset has no dynamic episodes")
        if (1 in stages or 2 in stages) and not static:
            raise DataMissing("stages 1-2 need static episodes")
        train_static, holdout = split_holdout(static)
        written: List[Path] = []

        def save(name: str, module, saver):
            if checkpoint_dir is not None:
                path = Path(checkpoint_dir) / name
                saver(path, module, self.iteration, extra)
                written.append(path)

        if 1 in stages:
            encoder = self.train_stage1(train_static, encoder, holdout)
            save("stage1_encoder.ckpt", encoder, save_encoder)
        encoder = encoder or init_encoder(self.config.encoder, self.config.seed)
        passes = self.train.curriculum_passes if (2 in stages or 3 in stages) else 0
        for p in range(passes):
            suffix = "" if p == 0 else f"_pass{p + 1}"
            if 2 in stages:
                reliability = self.train_stage2_reliability(train_static, encoder, reliability)
                save(f"stage2_reliability{suffix}.ckpt", reliability, save_reliability)
            if 3 in stages:
                if reliability is None and self.train.use_static_selection:
                    raise DataMissing("stage 3 with static selection needs a reliability checkpoint")
                encoder = self.train_stage3_finetune(dynamic, encoder, reliability, holdout)
                save(f"stage3_encoder{suffix}.ckpt", encoder, save_encoder)
        return {"encoder": encoder, "reliability": reliability, "checkpoints": written}


def split_holdout(episodes: Sequence[Episode], fraction: float = 0.1) -> Tuple[List[Episode], List[Episode]]:
    """Last ~10% of episodes held out for retrieval; nothing held out below two episodes"""
    episodes = list(episodes)
    if len(episodes) < 2:
        return episodes, []
    n_hold = max(1, int(round(fraction * len(episodes))))
    return episodes[:-n_hold], episodes[-n_hold:]


def train_stage1(episodes: Sequence[Episode], config: RunConfig, **kwargs) -> NeuralMapper:
    return TrainingEngine(config).train_stage1(episodes, **kwargs)


def train_stage2_reliability(episodes: Sequence[Episode], encoder: NeuralMapper, config: RunConfig, **kwargs) -> ReliabilityNet:
    return TrainingEngine(config).train_stage2_reliability(episodes, encoder, **kwargs)


def train_stage3_finetune(
    episodes: Sequence[Episode], encoder: NeuralMapper, reliability: Optional[ReliabilityNet], config: RunConfig, **kwargs
) -> NeuralMapper:
    return TrainingEngine(config).train_stage3_finetune(episodes, encoder, reliability, **kwargs)
