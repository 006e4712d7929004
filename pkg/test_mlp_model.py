#!/usr/bin/env python3
"""
Tests for the MLP model: init, forward, backprop and evaluation.
"""

import numpy as np
import pytest

from error_handler import AlignmentError, DomainError
from tensor_ops import DTYPE, ParamSet
from pruning import Mask, apply_mask, prune_to_density
from data_loader import Dataset, synth_gaussians
from mlp_model import (
    Batch, MlpConfig, evaluate, forward, init_params, loss_and_grads, predict
)


def zero_params(sizes):
    return ParamSet({
        name: np.zeros(shape, dtype=DTYPE)
        for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1)
        for name, shape in ((f"W_{layer}", (fan_in, fan_out)), (f"b_{layer}", (fan_out,)))
    })


def test_init_params_shapes_and_determinism():
    """[2, 3, 2] gives 17 parameters; zero biases; same seed, same weights."""
    config = MlpConfig([2, 3, 2], init_seed=7)
    params = init_params(config)
    assert params.names == ['W_1', 'b_1', 'W_2', 'b_2']
    assert params.shapes == [(2, 3), (3,), (3, 2), (2,)]
    assert params.total_count == 17
    assert not np.any(params['b_1']) and not np.any(params['b_2'])
    assert init_params(MlpConfig([2, 3, 2], init_seed=7)).equals(params)

    limit = np.sqrt(6.0 / 5.0)
    assert np.all(np.abs(params['W_1']) <= limit)
    print("✓ init_params")


def test_config_validation():
    from error_handler import ConfigError
    with pytest.raises(ConfigError):
        MlpConfig([5])
    with pytest.raises(ConfigError):
        MlpConfig([5, 0, 2])


def test_zero_params_give_zero_logits_and_log_c_loss():
    params = zero_params([4, 6, 3])
    batch = Batch(np.random.default_rng(0).random((5, 4)), [0, 1, 2, 0, 1])
    assert not np.any(forward(params, None, batch))
    loss, _ = loss_and_grads(params, None, batch)
    assert abs(loss - np.log(3)) < 1e-12
    print("✓ zero params: zero logits, loss = ln(C)")


def test_forward_hand_computed():
    """Single hidden unit with hand-set weights."""
    params = ParamSet({
        'W_1': np.array([[1.0], [0.25]], dtype=DTYPE),
        'b_1': np.array([0.5], dtype=DTYPE),
        'W_2': np.array([[2.0, -1.0]], dtype=DTYPE),
        'b_2': np.array([0.1, 0.0], dtype=DTYPE),
    })
    # hidden = relu(1*1 + 2*0.25 + 0.5) = 2.0; logits = [2*2 + 0.1, -2]
    logits = forward(params, None, Batch([[1.0, 2.0]], [0]))
    np.testing.assert_allclose(logits, [[4.1, -2.0]], rtol=1e-6)


def test_full_mask_and_apply_mask_equivalence():
    params = init_params(MlpConfig([4, 6, 3], init_seed=1))
    batch = Batch(np.random.default_rng(1).random((7, 4)), np.zeros(7, dtype=int))
    plain = forward(params, None, batch)
    assert np.array_equal(forward(params, Mask.full(params), batch), plain)

    pruned, mask = prune_to_density(params, 0.5)
    assert np.array_equal(forward(params, mask, batch), forward(apply_mask(params, mask), None, batch))


def test_gradient_finite_differences():
    """Central differences (eps=1e-3) on a [3, 4, 2] net with 8 samples."""
    seed = 0
    while True:
        rng = np.random.default_rng(seed)
        params = init_params(MlpConfig([3, 4, 2], init_seed=seed))
        params = ParamSet({name: t + 0.1 * rng.standard_normal(t.shape) for name, t in params.items()})
        inputs = rng.standard_normal((8, 3)).astype(np.float32)
        hidden = inputs.astype(np.float64) @ params['W_1'].astype(np.float64) + params['b_1']
        # stay away from ReLU kinks so finite differences are smooth
        if np.all(np.abs(hidden) > 1e-2):
            break
        seed += 1
    batch = Batch(inputs, rng.integers(0, 2, size=8))
    _, grads = loss_and_grads(params, None, batch)

    eps = 1e-3
    worst = 0.0
    for name in params:
        for index in np.ndindex(params[name].shape):
            plus = params.copy()
            minus = params.copy()
            plus.entries[name][index] += eps
            minus.entries[name][index] -= eps
            step = float(plus[name][index]) - float(minus[name][index])
            numeric = (loss_and_grads(plus, None, batch)[0] - loss_and_grads(minus, None, batch)[0]) / step
            analytic = float(grads[name][index])
            error = abs(analytic - numeric) / max(abs(numeric), 1e-3)
            worst = max(worst, error)
    assert worst < 1e-3, f"max relative error {worst}"
    print(f"✓ finite-difference check, max relative error {worst:.2e}")


def test_masked_gradients_are_zero():
    params = init_params(MlpConfig([4, 6, 3], init_seed=2))
    _, mask = prune_to_density(params, 0.3)
    batch = Batch(np.random.default_rng(2).random((5, 4)), [0, 1, 2, 1, 0])
    _, grads = loss_and_grads(params, mask, batch)
    for name in mask:
        assert np.all(grads[name][~mask[name]] == 0.0)


def test_loss_permutation_invariance():
    params = init_params(MlpConfig([4, 6, 3], init_seed=3))
    rng = np.random.default_rng(3)
    inputs = rng.random((10, 4))
    labels = rng.integers(0, 3, size=10)
    order = rng.permutation(10)
    loss_a, _ = loss_and_grads(params, None, Batch(inputs, labels))
    loss_b, _ = loss_and_grads(params, None, Batch(inputs[order], labels[order]))
    assert abs(loss_a - loss_b) < 1e-6


def test_evaluate_majority_and_tie_break():
    """Zero weights with a bias favouring class 0 predict the 70% majority."""
    params = zero_params([2, 2])
    params.entries['b_1'][:] = [1.0, 0.0]
    labels = np.array([0] * 7 + [1] * 3)
    dataset = Dataset(np.random.default_rng(4).random((10, 2)), labels, 2)
    accuracy, _ = evaluate(params, None, dataset)
    assert accuracy == pytest.approx(0.7)

    tied = zero_params([2, 2])
    assert predict(tied, None, np.ones((3, 2), dtype=np.float32)).tolist() == [0, 0, 0]
    print("✓ evaluate: majority class and lowest-index tie-break")


def test_evaluate_errors():
    params = zero_params([2, 2])
    with pytest.raises(DomainError):
        evaluate(params, None, None)
    bad = Batch(np.ones((1, 3)), [0])
    with pytest.raises(AlignmentError):
        forward(params, None, bad)


def test_evaluate_rejects_labels_beyond_model_classes():
    """A 5-class dataset against a 3-class network is a domain error."""
    params = init_params(MlpConfig([8, 12, 3], init_seed=0))
    dataset = synth_gaussians(5, 8, 4, 0.5, 0)
    with pytest.raises(DomainError):
        evaluate(params, Mask.full(params), dataset)
    with pytest.raises(DomainError):
        evaluate(params, None, dataset)

    fits = synth_gaussians(3, 8, 4, 0.5, 0)
    accuracy, _ = evaluate(params, Mask.full(params), fits)
    assert 0.0 <= accuracy <= 1.0
    print("✓ evaluate: label range checked against the output layer")


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
