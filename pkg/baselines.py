"""
Baselines Module
================
Comparison methods for Lottery Pools: sparsity-adapted SWA and EMA over the
same adjacency-ordered candidates, and the output (logit) ensemble.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional
import numpy as np

from error_handler import DomainError
from tensor_ops import ParamSet, scale_add
from pruning import Mask, prune_to_count
from mlp_model import evaluate, forward_features
from data_loader import Dataset
from checkpoint_store import Checkpoint
from imp_engine import ImpRun
from lottery_pools import MEMBERSHIP_ALL, order_candidates

logger = logging.getLogger(__name__)

DEFAULT_EMA_DECAY = 0.95


@dataclass
class SwaState:
    """Running arithmetic mean of the absorbed models."""
    running_mean: ParamSet
    n: int = 1

    def absorb(self, x: ParamSet) -> None:
        """running_mean <- n/(n+1) * running_mean + 1/(n+1) * x."""
        self.running_mean = scale_add(self.running_mean, x, self.n / (self.n + 1), 1.0 / (self.n + 1))
        self.n += 1


@dataclass
class EmaState:
    """Exponentially decayed shadow weights."""
    shadow: ParamSet
    decay: float = DEFAULT_EMA_DECAY

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise DomainError(f"EMA decay must lie in (0, 1), got {self.decay}")

    def update(self, x: ParamSet) -> None:
        """shadow <- decay * shadow + (1 - decay) * x."""
        self.shadow = scale_add(self.shadow, x, self.decay, 1.0 - self.decay)


def _result(target: Checkpoint, params: ParamSet, mask: Mask, recipe: str,
            valset: Optional[Dataset], **extra: str) -> Checkpoint:
    tags = dict(target.meta.extra)
    tags.update(recipe=recipe, **extra)
    if valset is not None:
        tags['val_accuracy'] = repr(evaluate(params, mask, valset)[0])
    return Checkpoint(params, mask, replace(target.meta, density=mask.density, extra=tags))


def swa_pool(
    run: ImpRun,
    t: int,
    valset: Optional[Dataset] = None,
    limit: Optional[int] = None,
    membership: str = MEMBERSHIP_ALL
) -> Checkpoint:
    """
    Sparsity-adapted SWA: absorb every candidate unconditionally.

    The running mean is pruned back to the kept count of checkpoint t after
    each absorption.

    Args:
        run: IMP run
        t: Target checkpoint index
        valset: Optional validation set (accuracy recorded in metadata)
        limit: Candidate limit
        membership: Candidate membership mode

    Returns:
        Checkpoint at the density of checkpoint t
    """
    run.check_index(t)
    target = run[t]
    keep = target.kept
    state = SwaState(target.params.copy())
    mask = target.mask.copy()
    for i in order_candidates(run, t, limit=limit, membership=membership):
        state.absorb(run[i].params)
        state.running_mean, mask = prune_to_count(state.running_mean, keep)
    logger.info(f"swa_pool: t={t} absorbed {state.n - 1} candidates")
    return _result(target, state.running_mean, mask, 'swa', valset, absorbed=str(state.n - 1))


def ema_pool(
    run: ImpRun,
    t: int,
    decay: float = DEFAULT_EMA_DECAY,
    valset: Optional[Dataset] = None,
    limit: Optional[int] = None,
    membership: str = MEMBERSHIP_ALL
) -> Checkpoint:
    """
    Sparsity-adapted EMA over the adjacency-ordered candidates.

    Args:
        run: IMP run
        t: Target checkpoint index
        decay: Decay factor in (0, 1)
        valset: Optional validation set (accuracy recorded in metadata)
        limit: Candidate limit
        membership: Candidate membership mode

    Returns:
        Checkpoint at the density of checkpoint t
    """
    run.check_index(t)
    target = run[t]
    keep = target.kept
    state = EmaState(target.params.copy(), decay)
    mask = target.mask.copy()
    for i in order_candidates(run, t, limit=limit, membership=membership):
        state.update(run[i].params)
        state.shadow, mask = prune_to_count(state.shadow, keep)
    logger.info(f"ema_pool: t={t} decay={decay}")
    return _result(target, state.shadow, mask, 'ema', valset, decay=repr(float(decay)))


def ensemble_members(run: ImpRun, t: int, k: int = 3) -> List[int]:
    """Checkpoint t followed by its k - 1 nearest neighbours in adjacency order."""
    if k < 1:
        raise DomainError(f"Ensemble size must be >= 1, got {k}")
    return [t] + order_candidates(run, t, limit=min(k - 1, run.iterations)).indices


def ensemble_logits(checkpoints: List[Checkpoint], dataset: Dataset, threads: int = 1) -> np.ndarray:
    """Per-sample mean of member logits, accumulated in float64."""
    if not checkpoints:
        raise DomainError("Output ensemble needs at least one member")
    if dataset is None or len(dataset) == 0:
        raise DomainError("Cannot evaluate on an empty dataset")

    def member_logits(ckpt: Checkpoint) -> np.ndarray:
        return forward_features(ckpt.params, ckpt.mask, dataset.features)

    if threads > 1 and len(checkpoints) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            all_logits = list(executor.map(member_logits, checkpoints))
    else:
        all_logits = [member_logits(ckpt) for ckpt in checkpoints]

    total = np.zeros(all_logits[0].shape, dtype=np.float64)
    for logits in all_logits:
        total += logits.astype(np.float64)
    return total / len(all_logits)


def output_ensemble(checkpoints: List[Checkpoint], dataset: Dataset, threads: int = 1) -> float:
    """
    Accuracy of the logit-averaging ensemble.

    Args:
        checkpoints: Member checkpoints (same model configuration)
        dataset: Evaluation set
        threads: Worker threads for member forward passes

    Returns:
        Accuracy in [0, 1]; argmax ties go to the lowest class index
    """
    mean_logits = ensemble_logits(checkpoints, dataset, threads=threads)
    predictions = np.argmax(mean_logits, axis=1)
    return float(np.mean(predictions == dataset.labels))
