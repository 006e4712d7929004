"""
Data Loader Module
==================
Dataset ingestion from IDX files (MNIST-style), synthetic Gaussian-blob
generation for desk-scale experiments, and deterministic train/validation
splits.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import numpy as np

from error_handler import DataLoadError, DomainError, FormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Features [N, d_in] (float32) with integer labels in [0, n_classes)."""
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise DomainError(f"Features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DomainError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.features.shape[0] < 1:
            raise DomainError("Dataset must contain at least one sample")
        if self.n_classes < 1 or self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise DomainError(f"Labels must lie in [0, {self.n_classes})")
        if not np.all(np.isfinite(self.features)):
            raise DomainError("Feature values must be finite")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: np.ndarray) -> 'Dataset':
        return Dataset(self.features[indices], self.labels[indices], self.n_classes)

    def fingerprint(self) -> str:
        """Content hash (sha256 over features, labels and class count)."""
        digest = hashlib.sha256()
        digest.update(struct.pack('<III', len(self), self.d_in, self.n_classes))
        digest.update(self.features.astype('<f4').tobytes())
        digest.update(self.labels.astype('<i8').tobytes())
        return digest.hexdigest()


def _read_idx(path: Path, expected_magic: int) -> Tuple[List[int], np.ndarray]:
    """Parse one IDX file; returns (dims, uint8 payload)."""
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise DataLoadError(f"IDX file not found: {path}") from e

    if len(raw) < 4:
        raise FormatError(f"{path.name}: truncated before magic number", offset=len(raw))
    (magic,) = struct.unpack_from('>I', raw, 0)
    if magic != expected_magic:
        raise FormatError(
            f"{path.name}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", offset=0
        )

    ndim = expected_magic & 0xFF
    header_size = 4 + 4 * ndim
    if len(raw) < header_size:
        raise FormatError(f"{path.name}: truncated dimension header", offset=len(raw))
    dims = list(struct.unpack_from(f'>{ndim}I', raw, 4))

    payload_size = int(np.prod(dims))
    if len(raw) < header_size + payload_size:
        raise FormatError(
            f"{path.name}: truncated payload, expected {payload_size} bytes", offset=len(raw)
        )
    data = np.frombuffer(raw, dtype=np.uint8, count=payload_size, offset=header_size)
    return dims, data


def load_idx(
    images_path: Union[str, Path],
    labels_path: Union[str, Path],
    n_classes: Optional[int] = None,
    limit: Optional[int] = None
) -> Dataset:
    """
    Load an IDX image/label pair.

    Images are flattened row-major and pixel bytes scaled by 1/255.

    Args:
        images_path: IDX3 file (magic 0x00000803)
        labels_path: IDX1 file (magic 0x00000801)
        n_classes: Class count (default: max label + 1)
        limit: Keep only the first `limit` samples

    Returns:
        Dataset
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    image_dims, pixels = _read_idx(images_path, IDX_IMAGES_MAGIC)
    label_dims, labels = _read_idx(labels_path, IDX_LABELS_MAGIC)

    if image_dims[0] != label_dims[0]:
        raise FormatError(
            f"Count mismatch: {images_path.name} holds {image_dims[0]} images, "
            f"{labels_path.name} holds {label_dims[0]} labels",
            offset=4
        )

    count = image_dims[0]
    features = pixels.reshape(count, image_dims[1] * image_dims[2]).astype(np.float32) / np.float32(255.0)
    labels = labels.astype(np.int64)

    if limit is not None:
        features = features[:limit]
        labels = labels[:limit]

    if n_classes is None:
        n_classes = int(labels.max()) + 1 if len(labels) else 1

    logger.info(f"load_idx: {len(labels)} samples of dimension {features.shape[1]} from {images_path.name}")
    return Dataset(features, labels, n_classes)


def write_idx(
    images: np.ndarray,
    labels: np.ndarray,
    images_path: Union[str, Path],
    labels_path: Union[str, Path]
) -> None:
    """
    Write a uint8 image stack [N, rows, cols] and labels [N] as an IDX pair.

    Args:
        images: uint8 array of shape [N, rows, cols]
        labels: integer labels (stored as uint8)
        images_path: Output IDX3 path
        labels_path: Output IDX1 path
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3:
        raise DomainError(f"IDX images must be 3-D, got shape {images.shape}")

    header = struct.pack('>IIII', IDX_IMAGES_MAGIC, *images.shape)
    Path(images_path).write_bytes(header + images.tobytes(order='C'))
    header = struct.pack('>II', IDX_LABELS_MAGIC, labels.shape[0])
    Path(labels_path).write_bytes(header + labels.tobytes())


def synth_gaussians(
    n_classes: int,
    d_in: int,
    n_per_class: int,
    spread: float,
    seed: int,
    noise_seed: Optional[int] = None
) -> Dataset:
    """
    Isotropic Gaussian blobs around deterministic unit directions scaled by 2.

    Args:
        n_classes: Number of classes
        d_in: Feature dimension
        n_per_class: Samples per class (labels are exactly balanced)
        spread: Noise standard deviation
        seed: Seed for the class directions (and the noise unless noise_seed is given)
        noise_seed: Separate noise seed, for held-out sets sharing the same classes

    Returns:
        Dataset with class-blocked sample order
    """
    if n_classes < 1 or d_in < 1 or n_per_class < 1:
        raise DomainError("synth_gaussians needs positive sizes")
    if spread < 0:
        raise DomainError(f"spread must be non-negative, got {spread}")

    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((n_classes, d_in))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers = 2.0 * directions

    if noise_seed is not None:
        rng = np.random.default_rng(noise_seed)
    noise = rng.standard_normal((n_classes * n_per_class, d_in))
    labels = np.repeat(np.arange(n_classes), n_per_class)
    features = centers[labels] + spread * noise
    return Dataset(features.astype(np.float32), labels, n_classes)


def split(dataset: Dataset, val_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """
    Deterministic shuffle, then the first round(val_fraction * N) samples go to validation.

    Returns:
        Tuple of (train, val)
    """
    if not 0.0 < val_fraction < 1.0:
        raise DomainError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(dataset)
    n_val = int(np.floor(val_fraction * n + 0.5))
    if n_val == 0 or n_val == n:
        raise DomainError(f"Degenerate split: {n_val} of {n} samples to validation")

    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(order[n_val:]), dataset.subset(order[:n_val])


def _parse_spec_options(tokens: List[str]) -> Dict[str, str]:
    options = {}
    for token in tokens:
        if '=' not in token:
            raise DataLoadError(f"Malformed data spec option '{token}' (expected key=value)")
        key, value = token.split('=', 1)
        options[key.strip()] = value.strip()
    return options


class DataLoader:
    """
    Loads datasets from spec strings, with an in-memory cache.

    Design:
    - `idx:<images>,<labels>[,limit=N][,classes=C]` reads an IDX pair
    - `synth:classes=C,dim=D,per_class=N,spread=S,seed=K[,noise_seed=M]` generates Gaussian blobs
    - Relative IDX paths resolve against `base_path`
    """

    def __init__(self, base_path: str = "."):
        """
        Initialize DataLoader.

        Args:
            base_path: Directory relative IDX paths are resolved against
        """
        self.base_path = Path(base_path)
        self.cache: Dict[str, Dataset] = {}

    def load(self, spec: str, use_cache: bool = True) -> Dataset:
        """
        Load the dataset described by `spec`.

        Args:
            spec: Data spec string
            use_cache: Whether to use cached data

        Returns:
            Dataset
        """
        if use_cache and spec in self.cache:
            return self.cache[spec]

        kind, _, rest = spec.partition(':')
        tokens = [token for token in rest.split(',') if token]

        if kind == 'idx':
            if len(tokens) < 2:
                raise DataLoadError(f"idx spec needs two paths: '{spec}'")
            options = _parse_spec_options(tokens[2:])
            dataset = load_idx(
                self._resolve(tokens[0]),
                self._resolve(tokens[1]),
                n_classes=int(options['classes']) if 'classes' in options else None,
                limit=int(options['limit']) if 'limit' in options else None,
            )
        elif kind == 'synth':
            options = _parse_spec_options(tokens)
            try:
                dataset = synth_gaussians(
                    n_classes=int(options.get('classes', 10)),
                    d_in=int(options.get('dim', 20)),
                    n_per_class=int(options.get('per_class', 100)),
                    spread=float(options.get('spread', 1.0)),
                    seed=int(options.get('seed', 0)),
                    noise_seed=int(options['noise_seed']) if 'noise_seed' in options else None,
                )
            except ValueError as e:
                raise DataLoadError(f"Bad synth spec '{spec}': {e}") from e
        else:
            raise DataLoadError(f"Unknown data spec kind '{kind}' in '{spec}' (use idx: or synth:)")

        if use_cache:
            self.cache[spec] = dataset
        return dataset

    def _resolve(self, path: str) -> Path:
        candidate = Path(path)
        return candidate if candidate.is_absolute() else self.base_path / candidate

    def clear_cache(self):
        """Clear the data cache."""
        self.cache.clear()
