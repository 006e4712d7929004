"""
Training Module
===============
Minibatch SGD with momentum, weight decay, step LR schedule and linear warmup.
Supports a fixed mask (masked weights stay exactly zero) and captures the
rewind snapshot after epoch j.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import numpy as np
from numba import jit
from tqdm import tqdm

from error_handler import ConfigError, DomainError
from tensor_ops import DTYPE, ParamSet
from pruning import Mask, apply_mask
from mlp_model import Batch, evaluate, loss_and_grads
from data_loader import Dataset

logger = logging.getLogger(__name__)


@jit(nopython=True)
def _sgd_momentum_step(
    weights: np.ndarray,
    grads: np.ndarray,
    momentum_buffer: np.ndarray,
    lr: np.float32,
    momentum: np.float32,
    weight_decay: np.float32
) -> None:
    """
    In-place update on flat float32 arrays:
    g = grad + wd * w; buf = momentum * buf + g; w = w - lr * buf.
    """
    for i in range(weights.shape[0]):
        g = grads[i] + weight_decay * weights[i]
        momentum_buffer[i] = momentum * momentum_buffer[i] + g
        weights[i] = weights[i] - lr * momentum_buffer[i]


@dataclass
class TrainConfig:
    """SGD schedule; `rewind_epoch` j is the number of completed epochs at the snapshot."""
    epochs: int = 30
    batch_size: int = 128
    base_lr: float = 0.1
    lr_drop_factor: float = 10.0
    lr_drop_epochs: List[int] = field(default_factory=lambda: [15, 23])
    warmup_epochs: int = 0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    rewind_epoch: int = 1
    shuffle_seed: int = 0

    def __post_init__(self):
        self.lr_drop_epochs = [int(epoch) for epoch in self.lr_drop_epochs]
        self.validate()

    def validate(self):
        """Raise ConfigError on an inconsistent schedule."""
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 <= self.rewind_epoch < self.epochs:
            raise ConfigError(f"rewind_epoch must lie in [0, {self.epochs}), got {self.rewind_epoch}")
        if any(b <= a for a, b in zip(self.lr_drop_epochs, self.lr_drop_epochs[1:])):
            raise ConfigError(f"lr_drop_epochs must be strictly increasing, got {self.lr_drop_epochs}")
        if any(epoch >= self.epochs or epoch < 0 for epoch in self.lr_drop_epochs):
            raise ConfigError(f"lr_drop_epochs must lie in [0, {self.epochs}), got {self.lr_drop_epochs}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.lr_drop_factor <= 0:
            raise ConfigError(f"lr_drop_factor must be positive, got {self.lr_drop_factor}")
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("base_lr, momentum and weight_decay must be non-negative")


@dataclass
class TrainResult:
    """Final weights, the epoch-j snapshot and per-epoch history."""
    final_params: ParamSet
    rewind_params: ParamSet
    history: List[Dict[str, float]] = field(default_factory=list)


def lr_at(config: TrainConfig, epoch: int, step_in_epoch: int, steps_per_epoch: int) -> float:
    """
    Learning rate for one optimizer step.

    Warmup ramps linearly from base_lr / warmup_steps up to base_lr over all
    warmup steps; afterwards base_lr is divided by lr_drop_factor once per
    drop epoch <= epoch.

    Args:
        config: Training configuration
        epoch: Zero-based epoch index
        step_in_epoch: Zero-based step inside the epoch
        steps_per_epoch: Optimizer steps per epoch

    Returns:
        Learning rate
    """
    warmup_steps = config.warmup_epochs * steps_per_epoch
    step = epoch * steps_per_epoch + step_in_epoch
    if step < warmup_steps:
        return config.base_lr * (step + 1) / warmup_steps
    drops = sum(1 for drop_epoch in config.lr_drop_epochs if drop_epoch <= epoch)
    return config.base_lr / (config.lr_drop_factor ** drops)


def train(
    params: ParamSet,
    mask: Optional[Mask],
    data: Tuple[Dataset, Optional[Dataset]],
    config: TrainConfig,
    show_progress: bool = False
) -> TrainResult:
    """
    Train to completion with a fresh momentum buffer.

    Args:
        params: Starting weights (not modified)
        mask: Optional fixed mask; gradients are zeroed outside it each step
        data: Tuple of (train, val); val may be None
        config: Training configuration
        show_progress: Whether to show a progress bar over epochs

    Returns:
        TrainResult
    """
    train_set, val_set = data
    if train_set is None or len(train_set) == 0:
        raise DomainError("Cannot train on an empty training set")

    current = apply_mask(params, mask) if mask is not None else params.copy()
    buffers = {name: np.zeros(tensor.size, dtype=DTYPE) for name, tensor in current.items()}
    momentum = DTYPE(config.momentum)
    weight_decay = DTYPE(config.weight_decay)

    n = len(train_set)
    batch_size = config.batch_size
    if batch_size > n:
        logger.warning(f"train: batch_size {batch_size} exceeds {n} training samples, using {n}")
        batch_size = n
    steps_per_epoch = n // batch_size

    rewind_params = current.copy() if config.rewind_epoch == 0 else None
    history = []

    epochs = range(config.epochs)
    if show_progress:
        epochs = tqdm(epochs, desc="Training", leave=False)

    for epoch in epochs:
        order = np.random.default_rng(config.shuffle_seed + epoch).permutation(n)
        loss_sum = 0.0
        for step in range(steps_per_epoch):
            indices = order[step * batch_size:(step + 1) * batch_size]
            batch = Batch(train_set.features[indices], train_set.labels[indices])
            loss, grads = loss_and_grads(current, mask, batch)
            loss_sum += loss

            lr = DTYPE(lr_at(config, epoch, step, steps_per_epoch))
            for name, tensor in current.items():
                flat = tensor.reshape(-1)
                _sgd_momentum_step(flat, grads[name].reshape(-1), buffers[name], lr, momentum, weight_decay)

        record = {'epoch': epoch + 1, 'train_loss': loss_sum / steps_per_epoch}
        if val_set is not None:
            record['val_accuracy'] = evaluate(current, mask, val_set)[0]
        history.append(record)
        logger.debug(f"train: epoch {epoch + 1}/{config.epochs} {record}")

        if epoch + 1 == config.rewind_epoch:
            rewind_params = current.copy()

    return TrainResult(final_params=current, rewind_params=rewind_params, history=history)
