"""
Shared fixtures: one tiny synthetic IMP run reused by the pool, baseline,
analysis and CLI tests.
"""

import pytest

from data_loader import split, synth_gaussians
from experiment_config import ImpConfig
from imp_engine import run_imp
from mlp_model import MlpConfig
from training import TrainConfig

TINY_LAYERS = [8, 12, 3]
TINY_ITERATIONS = 4


def tiny_imp_config(**overrides) -> ImpConfig:
    """Small IMP config: [8, 12, 3] MLP, 6 epochs, T=4, p=0.2."""
    train = TrainConfig(epochs=6, batch_size=16, base_lr=0.1, lr_drop_epochs=[4],
                        momentum=0.9, weight_decay=1e-4, rewind_epoch=1, shuffle_seed=0)
    values = dict(model=MlpConfig(TINY_LAYERS, init_seed=0), train=train,
                  iterations=TINY_ITERATIONS, prune_fraction=0.2)
    values.update(overrides)
    return ImpConfig(**values)


def tiny_datasets():
    """(train, val, test) drawn from 3 Gaussian blobs in 8 dimensions."""
    full = synth_gaussians(n_classes=3, d_in=8, n_per_class=60, spread=0.6, seed=0)
    train_set, val_set = split(full, 0.2, seed=0)
    test_set = synth_gaussians(n_classes=3, d_in=8, n_per_class=30, spread=0.6, seed=0, noise_seed=1)
    return train_set, val_set, test_set


@pytest.fixture(scope="session")
def tiny_run():
    """Dict with the ImpRun and its train/val/test sets."""
    train_set, val_set, test_set = tiny_datasets()
    run = run_imp(tiny_imp_config(), (train_set, val_set))
    return {'run': run, 'train': train_set, 'val': val_set, 'test': test_set}
