"""
Pruning Module
==============
Global magnitude pruning over the weight tensors of a ParamSet.

Design:
- One global ranking across all weight tensors (biases are never pruned)
- Ties on equal magnitude: lower (tensor order, flat index) is pruned first
- prune_fraction removes floor(p * kept) of the currently kept weights
- prune_within_mask keeps an exact count among the kept weights (IMP schedule)
- prune_to_density keeps exactly round-half-up(d * total) weights (pool recipes)
"""

import logging
import math
from typing import Dict, Iterator, List, Tuple, Union
import numpy as np

from error_handler import AlignmentError, DegenerateMaskError, DomainError
from tensor_ops import DTYPE, ParamSet

logger = logging.getLogger(__name__)

# guards floor(p * kept) against products like 159.99999999999997
_FLOOR_EPS = 1e-9


class Mask:
    """
    Binary support over the weight tensors of a ParamSet.

    Entries are boolean arrays keyed by weight-tensor name, in ParamSet order.
    """

    def __init__(self, entries: Dict[str, np.ndarray]):
        self.entries: Dict[str, np.ndarray] = {}
        for name, bits in entries.items():
            array = np.asarray(bits)
            if array.dtype != np.bool_:
                if not np.all((array == 0) | (array == 1)):
                    raise DomainError(f"Mask entry '{name}' has values outside {{0, 1}}")
                array = array.astype(np.bool_)
            self.entries[name] = array

    @classmethod
    def full(cls, params: ParamSet) -> 'Mask':
        """All-ones mask covering every weight tensor of `params`."""
        return cls({name: np.ones(params[name].shape, dtype=np.bool_) for name in params.weight_names()})

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> List[str]:
        return list(self.entries.keys())

    @property
    def total(self) -> int:
        return int(sum(bits.size for bits in self.entries.values()))

    @property
    def kept(self) -> int:
        return int(sum(np.count_nonzero(bits) for bits in self.entries.values()))

    @property
    def density(self) -> float:
        return self.kept / self.total if self.total else 0.0

    def copy(self) -> 'Mask':
        return Mask({name: bits.copy() for name, bits in self.entries.items()})

    def check_aligned(self, params: ParamSet) -> None:
        """Raise AlignmentError unless names/order/shapes match the weight tensors of `params`."""
        weight_names = params.weight_names()
        for index, name in enumerate(self.names):
            if index >= len(weight_names) or weight_names[index] != name:
                raise AlignmentError(f"Mask entry '{name}' has no matching weight tensor", entry=name)
            if params[name].shape != self.entries[name].shape:
                raise AlignmentError(
                    f"Mask entry '{name}' shape {self.entries[name].shape} vs weight {params[name].shape}",
                    entry=name
                )
        if len(weight_names) != len(self.names):
            missing = weight_names[len(self.names)]
            raise AlignmentError(f"Weight tensor '{missing}' is not covered by the mask", entry=missing)

    def is_subset_of(self, other: 'Mask') -> bool:
        """True when every kept position here is also kept in `other`."""
        if self.names != other.names:
            return False
        return all(
            self.entries[name].shape == other.entries[name].shape
            and not np.any(self.entries[name] & ~other.entries[name])
            for name in self.entries
        )

    def equals(self, other: 'Mask') -> bool:
        return self.names == other.names and all(
            np.array_equal(self.entries[name], other.entries[name]) for name in self.entries
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([bits.ravel() for bits in self.entries.values()])

    def __repr__(self) -> str:
        return f"Mask(density={self.density:.4f}, kept={self.kept}/{self.total})"


def _global_magnitudes(params: ParamSet, names: List[str]) -> np.ndarray:
    return np.concatenate([np.abs(params[name]).ravel() for name in names])


def _unflatten(flat_bits: np.ndarray, params: ParamSet, names: List[str]) -> Mask:
    entries = {}
    offset = 0
    for name in names:
        size = params[name].size
        entries[name] = flat_bits[offset:offset + size].reshape(params[name].shape).copy()
        offset += size
    return Mask(entries)


def apply_mask(params: ParamSet, mask: Mask) -> ParamSet:
    """
    Zero the weights outside the mask; biases pass through.

    Args:
        params: Parameter set
        mask: Mask aligned with the weight tensors of `params`

    Returns:
        New ParamSet
    """
    mask.check_aligned(params)
    return ParamSet({
        name: np.where(mask[name], tensor, DTYPE(0.0)) if name in mask.entries else tensor.copy()
        for name, tensor in params.items()
    })


def prune_fraction(params: ParamSet, mask: Mask, p: float) -> Mask:
    """
    Remove the floor(p * kept) smallest-magnitude kept weights, globally.

    Args:
        params: Trained weights the ranking is taken from
        mask: Current mask
        p: Fraction of the remaining weights to prune, in (0, 1)

    Returns:
        New mask, a subset of `mask`
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"Pruning fraction must lie in (0, 1), got {p}")
    mask.check_aligned(params)

    kept = mask.kept
    if kept == 0:
        raise DegenerateMaskError("Mask has no kept weights to prune")
    n_prune = int(math.floor(p * kept + _FLOOR_EPS))
    return prune_within_mask(params, mask, kept - n_prune)


def prune_within_mask(params: ParamSet, mask: Mask, keep: int) -> Mask:
    """
    Keep the `keep` largest-magnitude weights among those currently kept.

    Args:
        params: Trained weights the ranking is taken from
        mask: Current mask
        keep: Target kept count, 1 <= keep <= mask.kept

    Returns:
        New mask, a subset of `mask`
    """
    mask.check_aligned(params)
    kept = mask.kept
    if keep < 1:
        raise DegenerateMaskError(f"Pruning to {keep} of {kept} kept weights would empty the mask")
    if keep > kept:
        raise DomainError(f"Cannot keep {keep} weights, only {kept} are kept")

    names = mask.names
    magnitudes = _global_magnitudes(params, names)
    bits = mask.flat()
    kept_positions = np.flatnonzero(bits)
    # stable sort: among equal magnitudes the lower global index comes first
    order = np.argsort(magnitudes[kept_positions], kind='stable')
    new_bits = bits.copy()
    new_bits[kept_positions[order[:kept - keep]]] = False

    new_mask = _unflatten(new_bits, params, names)
    logger.debug(f"prune_within_mask: {kept} -> {new_mask.kept} kept weights")
    return new_mask


def prune_to_count(params: ParamSet, keep: int) -> Tuple[ParamSet, Mask]:
    """
    Keep exactly `keep` largest-magnitude weights globally; zero the rest.

    Args:
        params: Parameter set
        keep: Number of weights to keep, 1 <= keep <= total weights

    Returns:
        Tuple of (pruned ParamSet, mask)
    """
    names = params.weight_names()
    total = params.weight_count()
    if keep < 1:
        raise DegenerateMaskError(f"Keeping {keep} weights would empty the mask")
    if keep > total:
        raise DomainError(f"Cannot keep {keep} of {total} weights")
    if keep == total:
        return params.copy(), Mask.full(params)

    magnitudes = _global_magnitudes(params, names)
    order = np.argsort(magnitudes, kind='stable')
    bits = np.ones(total, dtype=np.bool_)
    bits[order[:total - keep]] = False
    mask = _unflatten(bits, params, names)
    return apply_mask(params, mask), mask


def target_count(total: int, target_density: float) -> int:
    """Round-half-up count of weights kept at `target_density`."""
    return int(math.floor(target_density * total + 0.5))


def prune_to_density(params: ParamSet, target_density: float) -> Tuple[ParamSet, Mask]:
    """
    Magnitude-prune to an absolute density.

    Args:
        params: Parameter set (pruned positions may already be zero)
        target_density: Fraction of weights to keep, in (0, 1]

    Returns:
        Tuple of (pruned ParamSet, mask); density 1 returns an unchanged copy and a full mask
    """
    if not 0.0 < target_density <= 1.0:
        raise DomainError(f"Target density must lie in (0, 1], got {target_density}")
    if target_density == 1.0:
        return params.copy(), Mask.full(params)
    return prune_to_count(params, target_count(params.weight_count(), target_density))


def density_of(x: Union[Mask, ParamSet]) -> float:
    """Kept fraction of a mask, or nonzero-weight fraction of a ParamSet (biases excluded)."""
    if isinstance(x, Mask):
        return x.density
    names = x.weight_names()
    total = x.weight_count()
    if total == 0:
        return 0.0
    return sum(int(np.count_nonzero(x[name])) for name in names) / total
