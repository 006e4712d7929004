"""
Tensor Operations Module
========================
The parameter-set abstraction every other module works on, and the two
elementwise kernels (linear interpolation and scaled accumulation) that
pooling, SWA and EMA are built from.

Storage is float32 throughout; reductions accumulate in float64.
"""

import logging
from typing import Dict, Iterator, List, Optional, Tuple
import numpy as np

from error_handler import AlignmentError, DomainError

logger = logging.getLogger(__name__)

DTYPE = np.float32


class ParamSet:
    """
    Ordered, named collection of float32 tensors (all weights and biases of one network).

    Design:
    - Entry order is the model's definition order and is preserved everywhere
    - Weight tensors are the entries with two or more dimensions; biases are 1-D
    - Treated as immutable by every public operation (fresh outputs, inputs untouched)
    """

    def __init__(self, entries: Dict[str, np.ndarray]):
        """
        Initialize ParamSet.

        Args:
            entries: Mapping of name to array, in definition order
        """
        self.entries: Dict[str, np.ndarray] = {}
        for name, tensor in entries.items():
            array = np.asarray(tensor, dtype=DTYPE)
            if array.ndim == 0 or any(dim < 1 for dim in array.shape):
                raise DomainError(f"Tensor '{name}' has invalid shape {array.shape}")
            self.entries[name] = array

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def items(self):
        return self.entries.items()

    @property
    def names(self) -> List[str]:
        return list(self.entries.keys())

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [tensor.shape for tensor in self.entries.values()]

    @property
    def total_count(self) -> int:
        """Total number of scalars d."""
        return int(sum(tensor.size for tensor in self.entries.values()))

    def weight_names(self) -> List[str]:
        """Names of prunable weight tensors (ndim >= 2), in order."""
        return [name for name, tensor in self.entries.items() if tensor.ndim >= 2]

    def weight_count(self) -> int:
        return int(sum(self.entries[name].size for name in self.weight_names()))

    def copy(self) -> 'ParamSet':
        return ParamSet({name: tensor.copy() for name, tensor in self.entries.items()})

    def flat(self) -> np.ndarray:
        """All entries concatenated in order (a copy)."""
        return np.concatenate([tensor.ravel() for tensor in self.entries.values()])

    def alignment_error(self, other: 'ParamSet') -> Optional[str]:
        """Describe the first mismatch with `other`, or None when aligned."""
        mine = list(self.entries.items())
        theirs = list(other.entries.items())
        for (name_a, tensor_a), (name_b, tensor_b) in zip(mine, theirs):
            if name_a != name_b:
                return f"entry name '{name_a}' vs '{name_b}'"
            if tensor_a.shape != tensor_b.shape:
                return f"entry '{name_a}' shape {tensor_a.shape} vs {tensor_b.shape}"
        if len(mine) != len(theirs):
            first_extra = (mine if len(mine) > len(theirs) else theirs)[min(len(mine), len(theirs))][0]
            return f"entry '{first_extra}' present on one side only"
        return None

    def is_aligned(self, other: 'ParamSet') -> bool:
        return self.alignment_error(other) is None

    def check_aligned(self, other: 'ParamSet') -> None:
        """Raise AlignmentError naming the first mismatching entry."""
        problem = self.alignment_error(other)
        if problem is not None:
            raise AlignmentError(f"ParamSets are not aligned: {problem}",
                                 entry=problem.split("'")[1])

    def equals(self, other: 'ParamSet') -> bool:
        """Bit-exact equality (names, shapes and raw bytes)."""
        if not self.is_aligned(other):
            return False
        return all(
            self.entries[name].tobytes() == other.entries[name].tobytes()
            for name in self.entries
        )

    def __repr__(self) -> str:
        shapes = ", ".join(f"{name}:{list(t.shape)}" for name, t in self.entries.items())
        return f"ParamSet({shapes})"


def lerp(a: ParamSet, b: ParamSet, alpha: float) -> ParamSet:
    """
    Linear interpolation alpha * a + (1 - alpha) * b, elementwise.

    `alpha` weights the FIRST argument. alpha=1 returns a and alpha=0 returns b,
    bit-exact.

    Args:
        a: First parameter set
        b: Second parameter set, aligned with `a`
        alpha: Coefficient in [0, 1]

    Returns:
        New interpolated ParamSet
    """
    a.check_aligned(b)
    alpha = float(alpha)
    if not np.isfinite(alpha) or alpha < 0.0 or alpha > 1.0:
        raise DomainError(f"Interpolation coefficient must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    # Both coefficients are rounded to float32 independently so that
    # lerp(a, b, x) and lerp(b, a, 1 - x) see the same pair.
    c_a = DTYPE(alpha)
    c_b = DTYPE(1.0 - alpha)
    return ParamSet({name: c_a * a[name] + c_b * b[name] for name in a})


def scale_add(acc: ParamSet, x: ParamSet, c_acc: float, c_x: float) -> ParamSet:
    """
    Scaled accumulation c_acc * acc + c_x * x, elementwise.

    Shared kernel for the SWA running mean and the EMA shadow update.
    """
    acc.check_aligned(x)
    if not (np.isfinite(c_acc) and np.isfinite(c_x)):
        raise DomainError(f"Coefficients must be finite, got {c_acc}, {c_x}")
    k_acc = DTYPE(c_acc)
    k_x = DTYPE(c_x)
    return ParamSet({name: k_acc * acc[name] + k_x * x[name] for name in acc})
