"""
MLP Model Module
================
Multilayer perceptron classifier f(x; theta) with ReLU hidden layers and
closed-form backprop. Parameters are plain ParamSets (W_l [fan_in, fan_out],
b_l [fan_out]); the model itself holds no state.

Matrix products and the loss are computed in float64 and stored back as float32.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple
import numpy as np

from error_handler import AlignmentError, ConfigError, DomainError
from tensor_ops import DTYPE, ParamSet
from pruning import Mask, apply_mask
from data_loader import Dataset

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 4096


@dataclass
class MlpConfig:
    """Layer widths [d_in, h_1, ..., h_k, n_classes] and the init seed."""
    layer_sizes: List[int] = field(default_factory=lambda: [784, 64, 32, 10])
    init_seed: int = 0

    def __post_init__(self):
        self.layer_sizes = [int(size) for size in self.layer_sizes]
        if len(self.layer_sizes) < 2:
            raise ConfigError(f"layer_sizes needs at least 2 entries, got {self.layer_sizes}")
        if any(size < 1 for size in self.layer_sizes):
            raise ConfigError(f"layer_sizes entries must be >= 1, got {self.layer_sizes}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]


@dataclass
class Batch:
    """Inputs [B, d_in] and B class indices."""
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise DomainError(f"Batch inputs must be [B>=1, d_in], got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DomainError("Batch needs exactly one label per input row")


def init_params(config: MlpConfig) -> ParamSet:
    """
    Glorot-uniform weights, zero biases; deterministic given config.init_seed.

    Args:
        config: Model configuration

    Returns:
        ParamSet with W_1, b_1, ..., W_L, b_L
    """
    rng = np.random.default_rng(config.init_seed)
    entries = {}
    sizes = config.layer_sizes
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        entries[f"W_{layer}"] = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(DTYPE)
        entries[f"b_{layer}"] = np.zeros(fan_out, dtype=DTYPE)
    return ParamSet(entries)


def _layers(params: ParamSet) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Pair up (W_l, b_l) and check the chain of shapes."""
    names = params.names
    if len(names) % 2 != 0:
        raise AlignmentError(f"Expected alternating W/b entries, got {names}")
    layers = []
    previous_out = None
    for index in range(0, len(names), 2):
        weight, bias = params[names[index]], params[names[index + 1]]
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise AlignmentError(
                f"Layer '{names[index]}' shape {weight.shape} does not match bias {bias.shape}",
                entry=names[index]
            )
        if previous_out is not None and weight.shape[0] != previous_out:
            raise AlignmentError(
                f"Layer '{names[index]}' expects {weight.shape[0]} inputs, previous layer gives {previous_out}",
                entry=names[index]
            )
        previous_out = weight.shape[1]
        layers.append((weight, bias))
    return layers


def _forward_pass(layers, inputs: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
    """float64 forward pass; returns (activations per layer input, logits)."""
    if inputs.shape[1] != layers[0][0].shape[0]:
        raise AlignmentError(
            f"Input dimension {inputs.shape[1]} does not match first layer {layers[0][0].shape[0]}"
        )
    activations = [inputs.astype(np.float64)]
    hidden = activations[0]
    for weight, bias in layers[:-1]:
        hidden = np.maximum(hidden @ weight.astype(np.float64) + bias.astype(np.float64), 0.0)
        activations.append(hidden)
    weight, bias = layers[-1]
    logits = hidden @ weight.astype(np.float64) + bias.astype(np.float64)
    return activations, logits


def _masked(params: ParamSet, mask: Optional[Mask]) -> ParamSet:
    return params if mask is None else apply_mask(params, mask)


def forward(params: ParamSet, mask: Optional[Mask], batch: Batch) -> np.ndarray:
    """
    Logits [B, n_classes] of the masked network.

    Args:
        params: Network parameters
        mask: Optional mask; masked weights behave exactly as zeros
        batch: Input batch

    Returns:
        float32 logits
    """
    _, logits = _forward_pass(_layers(_masked(params, mask)), batch.inputs)
    return logits.astype(DTYPE)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(
    params: ParamSet,
    mask: Optional[Mask],
    batch: Batch
) -> Tuple[float, ParamSet]:
    """
    Mean softmax cross-entropy and its gradient.

    Gradient entries at masked-out positions are exactly zero.

    Returns:
        Tuple of (loss, grads aligned with params)
    """
    effective = _masked(params, mask)
    layers = _layers(effective)
    activations, logits = _forward_pass(layers, batch.inputs)

    n_classes = logits.shape[1]
    if batch.labels.min() < 0 or batch.labels.max() >= n_classes:
        raise DomainError(f"Batch labels must lie in [0, {n_classes})")

    batch_size = logits.shape[0]
    log_probs = _log_softmax(logits)
    rows = np.arange(batch_size)
    loss = float(-log_probs[rows, batch.labels].mean())

    delta = np.exp(log_probs)
    delta[rows, batch.labels] -= 1.0
    delta /= batch_size

    grads = {}
    names = params.names
    for layer in range(len(layers) - 1, -1, -1):
        weight, _ = layers[layer]
        grads[names[2 * layer]] = activations[layer].T @ delta
        grads[names[2 * layer + 1]] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weight.astype(np.float64).T) * (activations[layer] > 0.0)

    ordered = {name: grads[name].astype(DTYPE) for name in names}
    if mask is not None:
        for name in mask:
            ordered[name] = np.where(mask[name], ordered[name], DTYPE(0.0))
    return loss, ParamSet(ordered)


def predict(params: ParamSet, mask: Optional[Mask], features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    logits = forward_features(params, mask, features)
    return np.argmax(logits, axis=1)


def forward_features(params: ParamSet, mask: Optional[Mask], features: np.ndarray) -> np.ndarray:
    """Logits for a raw feature matrix, evaluated in chunks."""
    layers = _layers(_masked(params, mask))
    chunks = []
    for start in range(0, features.shape[0], EVAL_BATCH_SIZE):
        _, logits = _forward_pass(layers, features[start:start + EVAL_BATCH_SIZE])
        chunks.append(logits.astype(DTYPE))
    return np.concatenate(chunks, axis=0)


def evaluate(params: ParamSet, mask: Optional[Mask], dataset: Dataset) -> Tuple[float, float]:
    """
    Accuracy and mean cross-entropy over a dataset.

    Args:
        params: Network parameters
        mask: Optional mask
        dataset: Non-empty dataset

    Returns:
        Tuple of (accuracy in [0, 1], mean loss)
    """
    if dataset is None or len(dataset) == 0:
        raise DomainError("Cannot evaluate on an empty dataset")

    layers = _layers(_masked(params, mask))
    n_classes = layers[-1][0].shape[1]
    if dataset.labels.min() < 0 or dataset.labels.max() >= n_classes:
        raise DomainError(
            f"Dataset labels span [{dataset.labels.min()}, {dataset.labels.max()}], "
            f"model outputs {n_classes} classes"
        )
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(dataset), EVAL_BATCH_SIZE):
        inputs = dataset.features[start:start + EVAL_BATCH_SIZE]
        labels = dataset.labels[start:start + EVAL_BATCH_SIZE]
        _, logits = _forward_pass(layers, inputs)
        # argmax on the stored float32 logits so evaluate agrees with predict()
        correct += int(np.sum(np.argmax(logits.astype(DTYPE), axis=1) == labels))
        loss_sum += float(-_log_softmax(logits)[np.arange(len(labels)), labels].sum())

    n = len(dataset)
    return correct / n, loss_sum / n
