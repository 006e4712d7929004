"""
Analysis Module
===============
Experiment drivers that turn an IMP run into result tables (pandas
DataFrames, written as CSV by the CLI):

- pairwise_heatmap: accuracy of pruned pairwise averages
- interpolation_path: loss/error along the segment between two checkpoints
- disagreement_matrix: fraction of differing predictions per pair
- ablate: candidate-count, coefficient-count and prune-time ablations
- compare_methods / ensemble_comparison: per-sparsity method tables
- aggregate_seeds: mean and std across seeds
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence
import numpy as np
import pandas as pd
from tqdm import tqdm

from error_handler import DomainError
from tensor_ops import lerp
from pruning import prune_to_count
from mlp_model import evaluate, predict
from data_loader import Dataset
from checkpoint_store import Checkpoint
from imp_engine import ImpRun
from lottery_pools import (
    PRUNE_MODES, CoefficientPool, LotteryPools, accuracy_scorer, pool_average, pool_interpolate
)
from baselines import DEFAULT_EMA_DECAY, ema_pool, ensemble_members, output_ensemble, swa_pool

logger = logging.getLogger(__name__)

HEATMAP_COLUMNS = ['i', 'j', 'density_i', 'density_j', 'cell_density', 'accuracy']
PATH_COLUMNS = ['alpha', 'loss', 'error']
DISAGREEMENT_COLUMNS = ['i', 'j', 'fraction']
ABLATION_COLUMNS = ['mode', 'arm', 't', 'density', 'val_acc', 'test_acc']

# coefficient pools of the coefficient-count ablation, keyed by pool size
COEFF_ARMS: Dict[int, List[float]] = {
    1: [0.5],
    3: [0.05, 0.5, 0.95],
    7: [0.05, 0.1, 0.3, 0.5, 0.7, 0.9, 0.95],
    11: [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95],
}

ABLATION_MODES = ('candidate_count', 'coeff_count', 'prune_mode')


def _map(func: Callable, items: Sequence, threads: int, desc: str, show_progress: bool) -> List[Any]:
    """Ordered map over independent work items, optionally threaded."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            results = executor.map(func, items)
            if show_progress:
                results = tqdm(results, total=len(items), desc=desc)
            return list(results)
    if show_progress:
        items = tqdm(items, desc=desc)
    return [func(item) for item in items]


def _average_cell(a: Checkpoint, b: Checkpoint, dataset: Dataset):
    """Accuracy of (a + b) / 2 pruned to the sparser parent; returns (density, accuracy)."""
    params, mask = prune_to_count(lerp(a.params, b.params, 0.5), min(a.kept, b.kept))
    return mask.density, evaluate(params, mask, dataset)[0]


def pairwise_heatmap(
    run: ImpRun,
    testset: Dataset,
    threads: int = 1,
    show_progress: bool = False
) -> pd.DataFrame:
    """
    Accuracy of every pairwise average, pruned to the higher sparsity of its parents.

    Args:
        run: IMP run
        testset: Test set
        threads: Worker threads for independent cells
        show_progress: Whether to show a progress bar

    Returns:
        DataFrame with HEATMAP_COLUMNS, one row per ordered pair (i, j); symmetric
    """
    n = len(run)
    diagonal = [evaluate(ckpt.params, ckpt.mask, testset)[0] for ckpt in run.checkpoints]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    cells = _map(lambda pair: _average_cell(run[pair[0]], run[pair[1]], testset),
                 pairs, threads, "Heatmap cells", show_progress)

    values = {(i, i): (run[i].density, diagonal[i]) for i in range(n)}
    for (i, j), cell in zip(pairs, cells):
        values[(i, j)] = cell
        values[(j, i)] = cell

    rows = [
        {
            'i': i, 'j': j,
            'density_i': run[i].density, 'density_j': run[j].density,
            'cell_density': values[(i, j)][0], 'accuracy': values[(i, j)][1],
        }
        for i in range(n) for j in range(n)
    ]
    return pd.DataFrame(rows, columns=HEATMAP_COLUMNS)


def to_matrix(df: pd.DataFrame, value: str = 'accuracy') -> np.ndarray:
    """Pivot a long (i, j, value) table into a square matrix."""
    matrix = df.pivot(index='i', columns='j', values=value).sort_index().sort_index(axis=1)
    return matrix.to_numpy(dtype=np.float64)


def adjacent_mean(matrix: np.ndarray) -> float:
    """Mean of the |i - j| = 1 cells (upper off-diagonal of a symmetric matrix)."""
    if matrix.shape[0] < 2:
        raise DomainError("adjacent_mean needs at least two checkpoints")
    return float(np.mean(np.diagonal(matrix, offset=1)))


def interpolation_path(ckpt_a: Checkpoint, ckpt_b: Checkpoint, testset: Dataset) -> pd.DataFrame:
    """
    Test loss and error at alpha = 0.0, 0.1, ..., 1.0 (alpha weights ckpt_a).

    Interior points are pruned to the higher sparsity of the endpoints;
    endpoints are evaluated as they are.

    Returns:
        DataFrame with PATH_COLUMNS, 11 rows
    """
    ckpt_a.params.check_aligned(ckpt_b.params)
    keep = min(ckpt_a.kept, ckpt_b.kept)
    rows = []
    for step in range(11):
        alpha = round(0.1 * step, 10)
        if alpha == 1.0:
            accuracy, loss = evaluate(ckpt_a.params, ckpt_a.mask, testset)
        elif alpha == 0.0:
            accuracy, loss = evaluate(ckpt_b.params, ckpt_b.mask, testset)
        else:
            params, mask = prune_to_count(lerp(ckpt_a.params, ckpt_b.params, alpha), keep)
            accuracy, loss = evaluate(params, mask, testset)
        rows.append({'alpha': alpha, 'loss': loss, 'error': 1.0 - accuracy})
    return pd.DataFrame(rows, columns=PATH_COLUMNS)


def disagreement_matrix(run: ImpRun, testset: Dataset) -> pd.DataFrame:
    """
    Fraction of test samples on which the argmax predictions of two checkpoints differ.

    Returns:
        DataFrame with DISAGREEMENT_COLUMNS, one row per ordered pair; zero diagonal
    """
    predictions = [predict(ckpt.params, ckpt.mask, testset.features) for ckpt in run.checkpoints]
    rows = [
        {'i': i, 'j': j, 'fraction': float(np.mean(predictions[i] != predictions[j]))}
        for i in range(len(predictions)) for j in range(len(predictions))
    ]
    return pd.DataFrame(rows, columns=DISAGREEMENT_COLUMNS)


def _targets(run: ImpRun, ts: Optional[Sequence[int]]) -> List[int]:
    targets = list(range(len(run))) if ts is None else [int(t) for t in ts]
    for t in targets:
        run.check_index(t)
    return targets


def _check_arm(run: ImpRun, mode: str, arm: Any) -> None:
    if mode == 'candidate_count':
        if not isinstance(arm, (int, np.integer)) or not 0 <= arm <= run.iterations:
            raise DomainError(f"candidate_count arm must be an integer in [0, {run.iterations}], got {arm!r}")
    elif mode == 'coeff_count':
        if arm not in COEFF_ARMS:
            raise DomainError(f"coeff_count arm must be one of {sorted(COEFF_ARMS)}, got {arm!r}")
    elif mode == 'prune_mode':
        if arm not in PRUNE_MODES:
            raise DomainError(f"prune_mode arm must be one of {PRUNE_MODES}, got {arm!r}")
    else:
        raise DomainError(f"Unknown ablation mode '{mode}' (choose {', '.join(ABLATION_MODES)})")


def ablate(
    run: ImpRun,
    mode: str,
    arms: Sequence[Any],
    valset: Dataset,
    testset: Dataset,
    ts: Optional[Sequence[int]] = None,
    threads: int = 1,
    show_progress: bool = False
) -> pd.DataFrame:
    """
    Rerun the interpolation recipe under each ablation arm.

    Args:
        run: IMP run
        mode: "candidate_count" (arm = candidate limit), "coeff_count"
            (arm = pool size 1, 3, 7 or 11) or "prune_mode" (arm = "during"/"after")
        arms: Arms to run
        valset: Validation set driving the search
        testset: Test set for reporting
        ts: Target checkpoints (default: all)
        threads: Worker threads for the coefficient grid
        show_progress: Whether to show a progress bar

    Returns:
        DataFrame with ABLATION_COLUMNS
    """
    for arm in arms:
        _check_arm(run, mode, arm)
    targets = _targets(run, ts)
    scorer = accuracy_scorer(valset)

    jobs = [(arm, t) for arm in arms for t in targets]
    if show_progress:
        jobs = tqdm(jobs, desc=f"Ablation ({mode})")

    rows = []
    for arm, t in jobs:
        pools = LotteryPools(run, scorer=scorer, threads=threads)
        if mode == 'candidate_count':
            result = pools.interpolate(t, limit=int(arm))
        elif mode == 'coeff_count':
            result = pools.interpolate(t, CoefficientPool(COEFF_ARMS[arm]))
        else:
            result = pools.interpolate(t, prune_mode=arm)
        rows.append({
            'mode': mode,
            'arm': arm,
            't': t,
            'density': result.density,
            'val_acc': evaluate(result.params, result.mask, valset)[0],
            'test_acc': evaluate(result.params, result.mask, testset)[0],
        })
    return pd.DataFrame(rows, columns=ABLATION_COLUMNS)


def compare_methods(
    run: ImpRun,
    valset: Dataset,
    testset: Dataset,
    coeffs: Optional[CoefficientPool] = None,
    decay: float = DEFAULT_EMA_DECAY,
    ts: Optional[Sequence[int]] = None,
    threads: int = 1,
    show_progress: bool = False
) -> pd.DataFrame:
    """
    Per-sparsity comparison of the original tickets, both Lottery Pools recipes, SWA and EMA.

    Returns:
        DataFrame with columns t, density, method, val_acc, test_acc
    """
    targets = _targets(run, ts)
    if show_progress:
        targets = tqdm(targets, desc="Methods")

    rows = []
    for t in targets:
        results = {
            'original': run[t],
            'lottery_pools_interp': pool_interpolate(run, t, coeffs, valset, threads=threads),
            'lottery_pools_avg': pool_average(run, t, valset, threads=threads),
            'swa': swa_pool(run, t),
            'ema': ema_pool(run, t, decay),
        }
        for method, ckpt in results.items():
            rows.append({
                't': t,
                'density': ckpt.density,
                'method': method,
                'val_acc': evaluate(ckpt.params, ckpt.mask, valset)[0],
                'test_acc': evaluate(ckpt.params, ckpt.mask, testset)[0],
            })
        logger.info(f"compare_methods: t={t} done")
    return pd.DataFrame(rows, columns=['t', 'density', 'method', 'val_acc', 'test_acc'])


def ensemble_comparison(
    run: ImpRun,
    valset: Dataset,
    testset: Dataset,
    k: int = 3,
    ts: Optional[Sequence[int]] = None,
    threads: int = 1
) -> pd.DataFrame:
    """
    Logit ensemble of {t and its k - 1 nearest} vs Lottery Pools restricted to the same candidates.

    The ensemble costs k forward passes per sample; the pooled network costs one.

    Returns:
        DataFrame with columns t, density, method, members, test_acc, forward_passes_per_sample
    """
    rows = []
    for t in _targets(run, ts):
        members = ensemble_members(run, t, k)
        accuracy = output_ensemble([run[i] for i in members], testset, threads=threads)
        rows.append({
            't': t, 'density': run[t].density, 'method': 'output_ensemble',
            'members': ",".join(str(i) for i in members), 'test_acc': accuracy,
            'forward_passes_per_sample': len(members),
        })

        pooled = pool_interpolate(run, t, None, valset, limit=len(members) - 1, threads=threads)
        rows.append({
            't': t, 'density': pooled.density, 'method': 'lottery_pools_interp',
            'members': ",".join(str(i) for i in members),
            'test_acc': evaluate(pooled.params, pooled.mask, testset)[0],
            'forward_passes_per_sample': 1,
        })
    return pd.DataFrame(rows, columns=['t', 'density', 'method', 'members', 'test_acc',
                                       'forward_passes_per_sample'])


def aggregate_seeds(
    frames: List[pd.DataFrame],
    keys: List[str],
    values: Optional[List[str]] = None
) -> pd.DataFrame:
    """
    Mean and standard deviation of per-seed tables.

    Args:
        frames: One table per seed, same schema
        keys: Grouping columns (e.g. ['t', 'method'])
        values: Numeric columns to aggregate (default: every numeric non-key column)

    Returns:
        DataFrame with the keys, `<value>_mean`, `<value>_std` and `seeds`
    """
    if not frames:
        raise DomainError("aggregate_seeds needs at least one table")
    combined = pd.concat(
        [frame.assign(seed=index) for index, frame in enumerate(frames)], ignore_index=True
    )
    if values is None:
        values = [
            column for column in combined.select_dtypes(include='number').columns
            if column not in keys and column != 'seed'
        ]

    grouped = combined.groupby(keys, sort=True)
    stats = grouped[values].agg(['mean', 'std'])
    stats.columns = [f"{column}_{stat}" for column, stat in stats.columns]
    stats['seeds'] = grouped['seed'].nunique()
    return stats.reset_index()
