#!/usr/bin/env python3
"""
Desk-scale verification of the two qualitative results:

1. Rewinding: mean adjacent-pair heatmap accuracy with rewinding exceeds the
   same statistic under rewind_to_init (seed mean).
2. Pooling: mean over t of (pooled - original) test accuracy is positive and
   the pooled network is at least as good at >= 70% of sparsity levels.

Usage: python verify_desk_scale.py [--preset desk_synth] [--seeds 0,1,2] [--data-root DIR]
"""

import sys
import argparse
import logging
from dataclasses import replace

import numpy as np
import pandas as pd

from data_loader import DataLoader, split
from experiment_config import PRESETS, RewindMode, get_preset
from imp_engine import run_imp
from mlp_model import evaluate
from lottery_pools import pool_interpolate
import analysis


def heatmap_contrast(config, loader, seed):
    """Adjacent-pair heatmap means for rewind_to_j and rewind_to_init."""
    seeded = config.with_seed(seed)
    train_set, val_set = split(loader.load(seeded.data), seeded.val_fraction, seeded.split_seed)
    test_set = loader.load(seeded.test_data)

    means = {}
    for mode in RewindMode:
        imp = replace(seeded.imp, rewind_mode=mode)
        run = run_imp(imp, (train_set, val_set))
        matrix = analysis.to_matrix(analysis.pairwise_heatmap(run, test_set))
        means[mode.value] = analysis.adjacent_mean(matrix)
        if mode is RewindMode.REWIND_TO_J:
            rewind_run = run
    return means, rewind_run, val_set, test_set


def pooling_gain(run, val_set, test_set):
    """Per-t test accuracy of the original tickets and the pooled networks (t >= 1)."""
    rows = []
    for t in range(1, len(run)):
        pooled = pool_interpolate(run, t, None, val_set)
        rows.append({
            't': t,
            'original': evaluate(run[t].params, run[t].mask, test_set)[0],
            'pooled': evaluate(pooled.params, pooled.mask, test_set)[0],
        })
    return pd.DataFrame(rows)


def main():
    """Run both checks and report per seed and on the seed mean."""
    parser = argparse.ArgumentParser(description='Desk-scale qualitative verification')
    parser.add_argument('--preset', default='desk_synth', choices=sorted(PRESETS))
    parser.add_argument('--seeds', default='0,1,2')
    parser.add_argument('--data-root', default='.')
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)

    config = get_preset(args.preset)
    loader = DataLoader(args.data_root)
    seeds = [int(seed) for seed in args.seeds.split(',')]

    print("=" * 70)
    print(f"DESK-SCALE VERIFICATION ({args.preset}, seeds {seeds})")
    print("=" * 70)

    contrasts = []
    gains = []
    for seed in seeds:
        means, run, val_set, test_set = heatmap_contrast(config, loader, seed)
        table = pooling_gain(run, val_set, test_set)
        diff = table['pooled'] - table['original']
        contrasts.append(means)
        gains.append({'mean_gain': float(diff.mean()), 'share_not_worse': float(np.mean(diff >= 0))})
        print(f"seed {seed}: adjacent mean rewind={means['rewind_to_j']:.4f} "
              f"init={means['rewind_to_init']:.4f} | pooling gain {diff.mean():+.4f}, "
              f"not worse at {np.mean(diff >= 0):.0%} of levels")

    contrast = pd.DataFrame(contrasts).mean()
    gain = pd.DataFrame(gains).mean()

    results = [
        ("Rewinding beats rewind_to_init on adjacent pairs",
         contrast['rewind_to_j'] > contrast['rewind_to_init']),
        ("Pooling improves mean test accuracy", gain['mean_gain'] > 0),
        ("Pooling not worse at >= 70% of sparsity levels", gain['share_not_worse'] >= 0.7),
    ]

    print("\n" + "=" * 70)
    for description, passed in results:
        print(f"{'✅' if passed else '❌'} {description}")
    print("=" * 70)
    return 0 if all(passed for _, passed in results) else 1


if __name__ == '__main__':
    sys.exit(main())
