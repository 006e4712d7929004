#!/usr/bin/env python3
"""
Tests for the SGD trainer: LR schedule, update rule, masking and rewind snapshots.
"""

import numpy as np
import pytest

from error_handler import ConfigError, DomainError
from tensor_ops import DTYPE, ParamSet
from pruning import prune_to_density
from data_loader import Dataset
from mlp_model import MlpConfig, evaluate, init_params
from training import TrainConfig, lr_at, train


def two_blobs(n_per_class: int = 100, seed: int = 0) -> Dataset:
    """Class 0 around (-2, 0), class 1 around (2, 0)."""
    rng = np.random.default_rng(seed)
    centers = np.array([[-2.0, 0.0], [2.0, 0.0]])
    labels = np.repeat([0, 1], n_per_class)
    features = centers[labels] + 0.3 * rng.standard_normal((2 * n_per_class, 2))
    return Dataset(features, labels, 2)


def test_lr_schedule_step_drops():
    config = TrainConfig(epochs=30, base_lr=0.1, lr_drop_factor=10.0, lr_drop_epochs=[15, 23])
    assert lr_at(config, 0, 0, 10) == pytest.approx(0.1)
    assert lr_at(config, 14, 9, 10) == pytest.approx(0.1)
    assert lr_at(config, 15, 0, 10) == pytest.approx(0.01)
    assert lr_at(config, 23, 0, 10) == pytest.approx(0.001)
    print("✓ step schedule")


def test_lr_schedule_warmup():
    """base 0.4, one warmup epoch of 4 steps: 0.1, 0.2, 0.3, 0.4, then 0.4."""
    config = TrainConfig(epochs=5, base_lr=0.4, lr_drop_epochs=[], warmup_epochs=1)
    ramp = [lr_at(config, 0, step, 4) for step in range(4)]
    assert ramp == pytest.approx([0.1, 0.2, 0.3, 0.4])
    assert lr_at(config, 1, 0, 4) == pytest.approx(0.4)
    print("✓ warmup reaches 0.2 at its midpoint")


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=5, rewind_epoch=5, lr_drop_epochs=[])
    with pytest.raises(ConfigError):
        TrainConfig(epochs=10, lr_drop_epochs=[6, 3])
    with pytest.raises(ConfigError):
        TrainConfig(epochs=10, lr_drop_epochs=[12])
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)


def test_single_sgd_step_by_hand():
    """Zero [2, 2] net, x=[1, 0], y=0, lr 0.1: gradient of the logits is [-0.5, 0.5]."""
    params = ParamSet({'W_1': np.zeros((2, 2), dtype=DTYPE), 'b_1': np.zeros(2, dtype=DTYPE)})
    data = Dataset([[1.0, 0.0]], [0], 2)
    config = TrainConfig(epochs=1, batch_size=1, base_lr=0.1, lr_drop_epochs=[],
                         momentum=0.0, weight_decay=0.0, rewind_epoch=0)
    result = train(params, None, (data, None), config)

    np.testing.assert_allclose(result.final_params['W_1'], [[0.05, -0.05], [0.0, 0.0]], rtol=1e-6)
    np.testing.assert_allclose(result.final_params['b_1'], [0.05, -0.05], rtol=1e-6)
    assert result.rewind_params.equals(params)
    assert not np.any(params['W_1'])
    print("✓ hand-computed SGD step")


def test_masked_weights_stay_zero():
    data = two_blobs()
    params = init_params(MlpConfig([2, 8, 2], init_seed=1))
    _, mask = prune_to_density(params, 0.4)
    config = TrainConfig(epochs=3, batch_size=20, base_lr=0.1, lr_drop_epochs=[],
                         momentum=0.9, weight_decay=1e-3, rewind_epoch=1)
    result = train(params, mask, (data, None), config)
    for name in mask:
        assert np.all(result.final_params[name][~mask[name]] == 0.0)
        assert np.all(result.rewind_params[name][~mask[name]] == 0.0)


def test_zero_learning_rate_is_identity():
    data = two_blobs()
    params = init_params(MlpConfig([2, 8, 2], init_seed=2))
    config = TrainConfig(epochs=2, batch_size=25, base_lr=0.0, lr_drop_epochs=[], rewind_epoch=1)
    result = train(params, None, (data, None), config)
    assert result.final_params.equals(params)


def test_training_is_deterministic():
    data = two_blobs()
    params = init_params(MlpConfig([2, 8, 2], init_seed=3))
    config = TrainConfig(epochs=3, batch_size=16, base_lr=0.05, lr_drop_epochs=[2], rewind_epoch=1)
    first = train(params, None, (data, data), config)
    second = train(params, None, (data, data), config)
    assert first.final_params.equals(second.final_params)
    assert first.rewind_params.equals(second.rewind_params)
    assert [h['train_loss'] for h in first.history] == [h['train_loss'] for h in second.history]


def test_rewind_snapshot_matches_shorter_run():
    """The epoch-2 snapshot of a 5-epoch run equals the end of a 2-epoch run."""
    data = two_blobs()
    params = init_params(MlpConfig([2, 8, 2], init_seed=4))
    long_run = train(params, None, (data, None), TrainConfig(
        epochs=5, batch_size=16, base_lr=0.05, lr_drop_epochs=[], rewind_epoch=2))
    short_run = train(params, None, (data, None), TrainConfig(
        epochs=2, batch_size=16, base_lr=0.05, lr_drop_epochs=[], rewind_epoch=0))
    assert long_run.rewind_params.equals(short_run.final_params)
    assert short_run.rewind_params.equals(params)


def test_separable_problem_is_learned():
    data = two_blobs(seed=5)
    params = init_params(MlpConfig([2, 8, 2], init_seed=5))
    config = TrainConfig(epochs=20, batch_size=10, base_lr=0.05, lr_drop_epochs=[15],
                         momentum=0.9, weight_decay=0.0, rewind_epoch=1)
    result = train(params, None, (data, data), config)
    accuracy, _ = evaluate(result.final_params, None, data)
    assert accuracy >= 0.99
    assert len(result.history) == 20
    assert result.history[-1]['val_accuracy'] == pytest.approx(accuracy)
    print(f"✓ separable blobs learned, accuracy {accuracy:.3f}")


def test_train_rejects_missing_data():
    params = init_params(MlpConfig([2, 8, 2], init_seed=0))
    with pytest.raises(DomainError):
        train(params, None, (None, None), TrainConfig(epochs=1, rewind_epoch=0, lr_drop_epochs=[]))


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
