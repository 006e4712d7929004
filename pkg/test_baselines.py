#!/usr/bin/env python3
"""
Tests for the SWA / EMA pool baselines and the output ensemble.
"""

import numpy as np
import pytest

from error_handler import DomainError
from tensor_ops import DTYPE, ParamSet
from pruning import Mask, prune_to_count
from data_loader import Dataset
from checkpoint_store import Checkpoint, CheckpointMeta
from experiment_config import ImpConfig
from imp_engine import ImpRun
from mlp_model import evaluate, forward_features
from lottery_pools import order_candidates
from baselines import (
    EmaState, SwaState, ema_pool, ensemble_logits, ensemble_members,
    output_ensemble, swa_pool
)


def random_params(rng) -> ParamSet:
    return ParamSet({'W_1': rng.standard_normal((3, 4)), 'b_1': rng.standard_normal(4)})


def dense_run(seed: int, n: int = 4) -> ImpRun:
    rng = np.random.default_rng(seed)
    checkpoints = []
    for t in range(n):
        params = random_params(rng)
        checkpoints.append(Checkpoint(params, Mask.full(params), CheckpointMeta(imp_iteration=t)))
    return ImpRun(checkpoints, rewind_params=checkpoints[0].params, config=ImpConfig())


def bias_only(bias) -> Checkpoint:
    params = ParamSet({'W_1': np.zeros((2, 2), dtype=DTYPE), 'b_1': np.array(bias, dtype=DTYPE)})
    return Checkpoint(params, Mask.full(params), CheckpointMeta())


def test_swa_running_mean_matches_batch_mean():
    rng = np.random.default_rng(0)
    models = [random_params(rng) for _ in range(10)]
    state = SwaState(models[0].copy())
    for model in models[1:]:
        state.absorb(model)
    assert state.n == 10
    for name in models[0]:
        batch_mean = np.mean([m[name].astype(np.float64) for m in models], axis=0)
        np.testing.assert_allclose(state.running_mean[name], batch_mean, atol=1e-5)
    print("✓ SWA running mean == batch mean")


def test_ema_closed_form():
    rng = np.random.default_rng(1)
    start = random_params(rng)
    updates = [random_params(rng) for _ in range(5)]
    decay = 0.9
    state = EmaState(start.copy(), decay)
    for x in updates:
        state.update(x)

    k = len(updates)
    for name in start:
        expected = decay ** k * start[name].astype(np.float64)
        for i, x in enumerate(updates, start=1):
            expected += (1 - decay) * decay ** (k - i) * x[name].astype(np.float64)
        np.testing.assert_allclose(state.shadow[name], expected, atol=1e-5)

    with pytest.raises(DomainError):
        EmaState(start, 1.0)
    with pytest.raises(DomainError):
        EmaState(start, 0.0)


def test_swa_pool_on_dense_pool_is_plain_average():
    run = dense_run(2)
    result = swa_pool(run, 1)
    for name in run[0].params:
        expected = np.mean([ckpt.params[name].astype(np.float64) for ckpt in run.checkpoints], axis=0)
        np.testing.assert_allclose(result.params[name], expected, atol=1e-5)
    assert result.meta.extra['recipe'] == 'swa'
    assert result.meta.extra['absorbed'] == '3'


def test_ema_pool_follows_candidate_order():
    run = dense_run(3)
    t, decay = 2, 0.8
    result = ema_pool(run, t, decay=decay)
    shadow = run[t].params['W_1'].astype(np.float64)
    for i in order_candidates(run, t):
        shadow = decay * shadow + (1 - decay) * run[i].params['W_1'].astype(np.float64)
    np.testing.assert_allclose(result.params['W_1'], shadow, atol=1e-5)

    with pytest.raises(DomainError):
        ema_pool(run, t, decay=1.5)


def test_pool_baselines_keep_target_density(tiny_run):
    run, val_set = tiny_run['run'], tiny_run['val']
    for t in (1, 3):
        swa = swa_pool(run, t, valset=val_set)
        ema = ema_pool(run, t, valset=val_set, limit=2)
        assert swa.kept == run[t].kept and ema.kept == run[t].kept
        swa.validate()
        ema.validate()
        assert 0.0 <= float(swa.meta.extra['val_accuracy']) <= 1.0

    unchanged = swa_pool(run, 2, limit=0)
    assert unchanged.params.equals(run[2].params)
    with pytest.raises(DomainError):
        swa_pool(run, 9)


def test_ensemble_members():
    run = dense_run(4, n=5)
    assert ensemble_members(run, 2, k=3) == [2, 1, 3]
    assert ensemble_members(run, 0, k=1) == [0]
    assert ensemble_members(run, 4, k=10) == [4, 3, 2, 1, 0]
    with pytest.raises(DomainError):
        ensemble_members(run, 0, k=0)


def test_output_ensemble_tie_goes_to_lowest_class():
    """Biases [1, 0] and [0, 1] average to a tie on every sample."""
    members = [bias_only([1.0, 0.0]), bias_only([0.0, 1.0])]
    features = np.random.default_rng(5).random((6, 2))
    assert output_ensemble(members, Dataset(features, [0] * 6, 2)) == 1.0
    assert output_ensemble(members, Dataset(features, [1] * 6, 2)) == 0.0


def test_output_ensemble_identical_members(tiny_run):
    run, test_set = tiny_run['run'], tiny_run['test']
    single = evaluate(run[1].params, run[1].mask, test_set)[0]
    assert output_ensemble([run[1]], test_set) == pytest.approx(single)
    assert output_ensemble([run[1]] * 3, test_set) == pytest.approx(single)


def test_ensemble_logits_brute_force(tiny_run):
    run, test_set = tiny_run['run'], tiny_run['test']
    members = [run[t] for t in ensemble_members(run, 2, k=3)]
    mean = ensemble_logits(members, test_set, threads=2)
    expected = sum(
        forward_features(ckpt.params, ckpt.mask, test_set.features).astype(np.float64) for ckpt in members
    ) / 3
    np.testing.assert_allclose(mean, expected, rtol=1e-12)

    accuracy = output_ensemble(members, test_set)
    assert accuracy == pytest.approx(np.mean(np.argmax(expected, axis=1) == test_set.labels))

    with pytest.raises(DomainError):
        output_ensemble([], test_set)


def test_sparse_pool_prunes_after_each_step():
    rng = np.random.default_rng(6)
    checkpoints = []
    for t, keep in enumerate((12, 9, 6)):
        pruned, mask = prune_to_count(random_params(rng), keep)
        checkpoints.append(Checkpoint(pruned, mask, CheckpointMeta(imp_iteration=t, density=mask.density)))
    run = ImpRun(checkpoints, rewind_params=checkpoints[0].params, config=ImpConfig())

    state = SwaState(checkpoints[2].params.copy())
    for i in (1, 0):
        state.absorb(checkpoints[i].params)
        state.running_mean, _ = prune_to_count(state.running_mean, 6)
    result = swa_pool(run, 2)
    assert result.params.equals(state.running_mean)
    assert result.kept == 6
    assert not np.any(result.params['W_1'][~result.mask['W_1']])


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
