#!/usr/bin/env python3
"""
Tests for global magnitude pruning.
"""

import numpy as np
import pytest

from error_handler import AlignmentError, DegenerateMaskError, DomainError
from tensor_ops import DTYPE, ParamSet, lerp
from pruning import (
    Mask, apply_mask, density_of, prune_fraction, prune_to_count, prune_to_density,
    prune_within_mask, target_count
)


def weights(values, shape=None) -> ParamSet:
    array = np.array(values, dtype=DTYPE)
    return ParamSet({'W_1': array.reshape(shape or (1, len(values))), 'b_1': np.zeros(1)})


def random_params(seed: int, sizes=(10, 8, 4)) -> ParamSet:
    rng = np.random.default_rng(seed)
    entries = {}
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        entries[f"W_{layer}"] = rng.standard_normal((fan_in, fan_out))
        entries[f"b_{layer}"] = rng.standard_normal(fan_out)
    return ParamSet(entries)


def test_prune_fraction_example():
    """[0.1, -0.5, 0.3, -0.05] at p=0.5 keeps -0.5 and 0.3."""
    params = weights([0.1, -0.5, 0.3, -0.05])
    mask = prune_fraction(params, Mask.full(params), 0.5)
    assert mask['W_1'].ravel().tolist() == [False, True, True, False]
    print("✓ prune_fraction example")


def test_prune_fraction_geometric_schedule():
    """p=0.2 on 1000 weights: 800, then 640, then 512."""
    params = weights(np.random.default_rng(0).standard_normal(1000), (25, 40))
    mask = Mask.full(params)
    kept = []
    for _ in range(3):
        new_mask = prune_fraction(params, mask, 0.2)
        assert new_mask.is_subset_of(mask)
        mask = new_mask
        kept.append(mask.kept)
    assert kept == [800, 640, 512]
    assert density_of(mask) == pytest.approx(0.512)
    print("✓ 0.8 / 0.64 / 0.512 densities")


def test_prune_fraction_tie_break_and_errors():
    params = weights([1.0, 1.0, 1.0, 1.0])
    mask = prune_fraction(params, Mask.full(params), 0.5)
    # equal magnitudes: the lower flat index is pruned first
    assert mask['W_1'].ravel().tolist() == [False, False, True, True]

    with pytest.raises(DomainError):
        prune_fraction(params, Mask.full(params), 1.0)
    single = Mask({'W_1': np.array([[True, False, False, False]])})
    with pytest.raises(DegenerateMaskError):
        prune_within_mask(params, single, 0)


def test_prune_within_mask_exact_count():
    params = random_params(1)
    mask = prune_within_mask(params, Mask.full(params), 50)
    assert mask.kept == 50
    smaller = prune_within_mask(params, mask, 20)
    assert smaller.kept == 20 and smaller.is_subset_of(mask)
    with pytest.raises(DomainError):
        prune_within_mask(params, smaller, 21)


def test_prune_to_density_examples():
    params = weights([3.0, -2.0, 1.0, 0.0])
    pruned, mask = prune_to_density(params, 0.5)
    assert mask['W_1'].ravel().tolist() == [True, True, False, False]
    assert pruned['W_1'].ravel().tolist() == [3.0, -2.0, 0.0, 0.0]

    identity, full = prune_to_density(params, 1.0)
    assert identity.equals(params) and full.kept == full.total

    with pytest.raises(DomainError):
        prune_to_density(params, 0.0)
    with pytest.raises(DomainError):
        prune_to_density(params, 1.2)


def test_prune_to_density_union_of_disjoint_supports():
    """Average of two disjoint half-masks pruned to 0.5 keeps the largest half of the union."""
    rng = np.random.default_rng(2)
    values = rng.standard_normal(10)
    a = weights(np.where(np.arange(10) < 5, values, 0.0))
    b = weights(np.where(np.arange(10) >= 5, values, 0.0))
    pruned, mask = prune_to_density(lerp(a, b, 0.5), 0.5)

    expected = np.zeros(10, dtype=bool)
    expected[np.argsort(np.abs(values), kind='stable')[5:]] = True
    assert mask['W_1'].ravel().tolist() == expected.tolist()


def test_prune_to_density_matches_sort_oracle():
    """100 random parameter sets: kept set == top-k by |w| with the stable tie rule."""
    rng = np.random.default_rng(3)
    for trial in range(100):
        sizes = (int(rng.integers(2, 40)), int(rng.integers(2, 40)), int(rng.integers(2, 10)))
        params = random_params(trial, sizes)
        density = float(rng.uniform(0.15, 1.0))
        _, mask = prune_to_density(params, density)

        flat = np.concatenate([np.abs(params[name]).ravel() for name in params.weight_names()])
        keep = target_count(flat.size, density)
        expected = np.zeros(flat.size, dtype=bool)
        expected[np.argsort(flat, kind='stable')[flat.size - keep:]] = True
        assert np.array_equal(mask.flat(), expected), f"trial {trial}"
        assert mask.kept == keep

        if keep < flat.size:
            assert flat[mask.flat()].min() >= flat[~mask.flat()].max()
    print("✓ prune_to_density matches brute-force oracle on 100 instances")


def test_prune_to_count_biases_untouched():
    params = random_params(4)
    pruned, mask = prune_to_count(params, 10)
    assert mask.kept == 10
    assert np.array_equal(pruned['b_1'], params['b_1'])
    assert density_of(pruned) == pytest.approx(10 / params.weight_count())


def test_apply_mask_properties():
    params = random_params(5)
    full = Mask.full(params)
    assert apply_mask(params, full).equals(params)

    _, mask = prune_to_density(params, 0.4)
    mask.entries['W_1'][0, :] = False
    once = apply_mask(params, mask)
    assert not np.any(once['W_1'][0, :])
    assert apply_mask(once, mask).equals(once)
    assert density_of(once) == pytest.approx(density_of(mask))


def test_mask_alignment():
    params = random_params(6)
    bad = Mask({'W_1': np.ones((10, 8), dtype=bool)})
    with pytest.raises(AlignmentError) as info:
        apply_mask(params, bad)
    assert info.value.entry == 'W_2'

    with pytest.raises(DomainError):
        Mask({'W_1': np.array([[0, 2]])})


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
