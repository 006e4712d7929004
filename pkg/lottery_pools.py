"""
Lottery Pools Module
====================
Greedy, sparsity-preserving weight interpolation over the checkpoints of an
IMP run: the interpolation recipe, the fixed-0.5 averaging recipe, dense
strengthening and the prune-after variant.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Union
import numpy as np

from error_handler import DomainError
from tensor_ops import ParamSet, lerp
from pruning import prune_to_count
from mlp_model import evaluate
from data_loader import Dataset
from checkpoint_store import Checkpoint
from imp_engine import ImpRun

logger = logging.getLogger(__name__)

DEFAULT_COEFFS = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95]

PRUNE_DURING = "during"
PRUNE_AFTER = "after"
PRUNE_MODES = (PRUNE_DURING, PRUNE_AFTER)

MEMBERSHIP_ALL = "all"
MEMBERSHIP_NEAREST_LOWER = "nearest_lower"
MEMBERSHIPS = (MEMBERSHIP_ALL, MEMBERSHIP_NEAREST_LOWER)

Scorer = Callable[[ParamSet], float]


class CoefficientPool:
    """Ordered, duplicate-free interpolation coefficients in (0, 1)."""

    def __init__(self, values: Iterable[float] = DEFAULT_COEFFS):
        self.values: List[float] = [float(value) for value in values]
        if not self.values:
            raise DomainError("Coefficient pool is empty")
        for value in self.values:
            if not 0.0 < value < 1.0:
                raise DomainError(f"Coefficient {value} outside (0, 1)")
        if len(set(self.values)) != len(self.values):
            raise DomainError(f"Coefficient pool has duplicates: {self.values}")

    @classmethod
    def parse(cls, text: str) -> 'CoefficientPool':
        """Parse a comma-separated list such as '0.05,0.5,0.95'."""
        try:
            return cls(float(item) for item in text.split(',') if item.strip())
        except ValueError as e:
            raise DomainError(f"Bad coefficient list '{text}': {e}") from e

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"CoefficientPool({self.values})"


@dataclass
class CandidatePool:
    """Candidate checkpoint indices for target t, in adjacency order."""
    t: int
    indices: List[int]

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def order_candidates(
    run: ImpRun,
    t: int,
    limit: Optional[int] = None,
    membership: str = MEMBERSHIP_ALL
) -> CandidatePool:
    """
    Sort the other checkpoints by |i - t|, lower index first on ties.

    Args:
        run: IMP run
        t: Target checkpoint index
        limit: Keep only the first `limit` candidates (None = all)
        membership: "all", or "nearest_lower" for {t-1, t+1, t+2, ...}

    Returns:
        CandidatePool
    """
    run.check_index(t)
    if membership not in MEMBERSHIPS:
        raise DomainError(f"Unknown membership '{membership}' (choose {', '.join(MEMBERSHIPS)})")

    others = [i for i in range(run.iterations + 1) if i != t]
    if membership == MEMBERSHIP_NEAREST_LOWER:
        others = [i for i in others if i >= t - 1]
    ordered = sorted(others, key=lambda i: (abs(i - t), i))

    if limit is not None:
        if not 0 <= limit <= run.iterations:
            raise DomainError(f"Candidate limit must lie in [0, {run.iterations}], got {limit}")
        ordered = ordered[:limit]
    return CandidatePool(t=t, indices=ordered)


def accuracy_scorer(valset: Dataset) -> Scorer:
    """Validation accuracy of an (already pruned) parameter set."""
    if valset is None or len(valset) == 0:
        raise DomainError("Validation set is empty")

    def score(params: ParamSet) -> float:
        return evaluate(params, None, valset)[0]
    return score


class LotteryPools:
    """
    Greedy interpolation over an IMP pool.

    Design:
    - The incumbent starts as checkpoint t; each candidate is tried at every
      coefficient, alpha weighting the incumbent
    - Prune-during: every trial is pruned to the kept count of checkpoint t
      before scoring; prune-after: trials stay unpruned, one prune at the end
    - Best alpha = first maximum in pool order; accepted when its score >= the
      incumbent's score
    - Trials for one candidate may be scored on a thread pool; the winner is
      rebuilt afterwards so only one extra ParamSet outlives the step
    """

    def __init__(
        self,
        run: ImpRun,
        valset: Optional[Dataset] = None,
        scorer: Optional[Scorer] = None,
        threads: int = 1
    ):
        """
        Initialize LotteryPools.

        Args:
            run: IMP run the pool is drawn from
            valset: Validation set for the default accuracy scorer
            scorer: Custom score function (overrides valset)
            threads: Worker threads for the per-candidate coefficient grid
        """
        if scorer is None:
            scorer = accuracy_scorer(valset)
        self.run = run
        self.scorer = scorer
        self.threads = max(1, int(threads))
        self.records: List[Dict[str, Any]] = []

    def _score_all(self, build: Callable[[float], ParamSet], coeffs: CoefficientPool) -> List[float]:
        def trial(alpha: float) -> float:
            return float(self.scorer(build(alpha)))

        if self.threads > 1 and len(coeffs) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                return list(executor.map(trial, coeffs))
        return [trial(alpha) for alpha in coeffs]

    def interpolate(
        self,
        t: int,
        coeffs: Optional[CoefficientPool] = None,
        limit: Optional[int] = None,
        prune_mode: str = PRUNE_DURING,
        membership: str = MEMBERSHIP_ALL
    ) -> Checkpoint:
        """
        Greedy interpolation recipe for target t.

        Args:
            t: Target checkpoint index
            coeffs: Coefficient pool (default: the 11-value pool)
            limit: Candidate limit (None = all)
            prune_mode: "during" or "after"
            membership: Candidate membership mode

        Returns:
            Checkpoint with exactly the kept count of checkpoint t
        """
        coeffs = coeffs if coeffs is not None else CoefficientPool()
        if prune_mode not in PRUNE_MODES:
            raise DomainError(f"Unknown prune mode '{prune_mode}' (choose {', '.join(PRUNE_MODES)})")
        candidates = order_candidates(self.run, t, limit=limit, membership=membership)

        target = self.run[t]
        keep = target.kept
        best = target.params
        best_mask = target.mask
        best_score = float(self.scorer(best))
        initial_score = best_score
        accepted_count = 0

        for i in candidates:
            other = self.run[i].params
            incumbent = best

            def build(alpha: float) -> ParamSet:
                mixed = lerp(incumbent, other, alpha)
                if prune_mode == PRUNE_DURING:
                    mixed, _ = prune_to_count(mixed, keep)
                return mixed

            scores = self._score_all(build, coeffs)
            winner = int(np.argmax(scores))
            alpha = coeffs.values[winner]
            accepted = scores[winner] >= best_score

            record = {
                't': t,
                'candidate': i,
                'alpha': alpha,
                'val_acc_before': best_score,
                'val_acc_after': scores[winner] if accepted else best_score,
                'accepted': bool(accepted),
                'prune_mode': prune_mode,
            }
            self.records.append(record)
            logger.debug(f"interpolate: {record}")

            if accepted:
                mixed = lerp(incumbent, other, alpha)
                if prune_mode == PRUNE_DURING:
                    best, best_mask = prune_to_count(mixed, keep)
                else:
                    best = mixed
                best_score = scores[winner]
                accepted_count += 1

        if accepted_count == 0:
            logger.info(f"interpolate: t={t} no candidate accepted, keeping checkpoint {t}")
            return Checkpoint(target.params.copy(), target.mask.copy(), target.meta)

        if prune_mode == PRUNE_AFTER:
            best, best_mask = prune_to_count(best, keep)

        logger.info(
            f"interpolate: t={t} accepted {accepted_count}/{len(candidates)} candidates, "
            f"score {initial_score:.4f} -> {best_score:.4f}"
        )
        extra = dict(target.meta.extra)
        extra.update(recipe='lottery_pools', prune_mode=prune_mode,
                     accepted=str(accepted_count), coeffs=",".join(repr(c) for c in coeffs))
        meta = replace(target.meta, density=best_mask.density, extra=extra)
        return Checkpoint(best, best_mask, meta)

    def average(self, t: int, limit: Optional[int] = None, membership: str = MEMBERSHIP_ALL) -> Checkpoint:
        """Averaging recipe: the interpolation recipe with the single coefficient 0.5."""
        return self.interpolate(t, CoefficientPool([0.5]), limit=limit, membership=membership)

    def strengthen_dense(
        self,
        coeffs: Optional[CoefficientPool] = None,
        limit: Optional[int] = None,
        membership: str = MEMBERSHIP_ALL
    ) -> Checkpoint:
        """Interpolate into the dense checkpoint t = 0; the result stays dense."""
        if self.run[0].kept != self.run[0].mask.total:
            raise DomainError("Checkpoint 0 is not dense")
        return self.interpolate(0, coeffs, limit=limit, membership=membership)

    def write_search_log(self, path: Union[str, Path]) -> Path:
        """Write the search records as line-delimited JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for record in self.records:
                f.write(json.dumps(record) + "\n")
        return path


def pool_interpolate(
    run: ImpRun,
    t: int,
    coeffs: Optional[CoefficientPool],
    valset: Optional[Dataset],
    prune_mode: str = PRUNE_DURING,
    limit: Optional[int] = None,
    membership: str = MEMBERSHIP_ALL,
    scorer: Optional[Scorer] = None,
    threads: int = 1
) -> Checkpoint:
    """Greedy interpolation recipe (see LotteryPools.interpolate)."""
    pools = LotteryPools(run, valset, scorer=scorer, threads=threads)
    return pools.interpolate(t, coeffs, limit=limit, prune_mode=prune_mode, membership=membership)


def pool_average(
    run: ImpRun,
    t: int,
    valset: Optional[Dataset],
    limit: Optional[int] = None,
    membership: str = MEMBERSHIP_ALL,
    scorer: Optional[Scorer] = None,
    threads: int = 1
) -> Checkpoint:
    """Averaging recipe (coefficient 0.5, prune-during)."""
    return LotteryPools(run, valset, scorer=scorer, threads=threads).average(t, limit=limit, membership=membership)


def strengthen_dense(
    run: ImpRun,
    coeffs: Optional[CoefficientPool],
    valset: Optional[Dataset],
    limit: Optional[int] = None,
    scorer: Optional[Scorer] = None,
    threads: int = 1
) -> Checkpoint:
    """Dense strengthening: interpolation into checkpoint 0."""
    return LotteryPools(run, valset, scorer=scorer, threads=threads).strengthen_dense(coeffs, limit=limit)
