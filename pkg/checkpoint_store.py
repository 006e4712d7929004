"""
Checkpoint Storage Module
=========================
Bit-exact persistence of checkpoints (LPCK binary format) and of IMP runs
(one file per iteration plus a plain-text manifest).

LPCK layout (little-endian):
- magic "LPCK" (4 bytes), version u32
- metadata block: u32 length + UTF-8 key=value lines
- tensor count u32, then per tensor:
  name (u32 length + UTF-8), dtype tag u8 (1 = float32, 2 = mask bits packed
  8 per byte, LSB first), ndim u32, dims u32[ndim], raw data
- trailing CRC32 (u32) of every preceding byte
"""

import logging
import struct
import zlib
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import numpy as np

from error_handler import CorruptionError, DataLoadError, DomainError, FormatError
from tensor_ops import DTYPE, ParamSet
from pruning import Mask

logger = logging.getLogger(__name__)

MAGIC = b"LPCK"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1

DTYPE_FLOAT32 = 1
DTYPE_MASK_BITS = 2

PARAM_PREFIX = "param/"
MASK_PREFIX = "mask/"

MANIFEST_NAME = "manifest.txt"
REWIND_FILE = "rewind.lpck"


@dataclass
class CheckpointMeta:
    """Provenance of one checkpoint."""
    imp_iteration: int = 0
    density: float = 1.0
    rewind_epoch: int = 0
    prune_fraction: float = 0.0
    layer_sizes: List[int] = field(default_factory=list)
    init_seed: int = 0
    shuffle_seed: int = 0
    schema_version: int = SCHEMA_VERSION
    extra: Dict[str, str] = field(default_factory=dict)

    def to_lines(self) -> List[str]:
        lines = [
            f"imp_iteration={self.imp_iteration}",
            f"density={self.density!r}",
            f"rewind_epoch={self.rewind_epoch}",
            f"prune_fraction={self.prune_fraction!r}",
            f"layer_sizes={','.join(str(size) for size in self.layer_sizes)}",
            f"init_seed={self.init_seed}",
            f"shuffle_seed={self.shuffle_seed}",
            f"schema_version={self.schema_version}",
        ]
        lines.extend(f"extra.{key}={value}" for key, value in self.extra.items())
        return lines

    @classmethod
    def from_lines(cls, lines: List[str]) -> 'CheckpointMeta':
        values: Dict[str, str] = {}
        extra: Dict[str, str] = {}
        for line in lines:
            if not line:
                continue
            key, sep, value = line.partition('=')
            if not sep:
                raise FormatError(f"Metadata line without '=': {line!r}")
            if key.startswith("extra."):
                extra[key[len("extra."):]] = value
            else:
                values[key] = value
        try:
            return cls(
                imp_iteration=int(values.get('imp_iteration', 0)),
                density=float(values.get('density', 1.0)),
                rewind_epoch=int(values.get('rewind_epoch', 0)),
                prune_fraction=float(values.get('prune_fraction', 0.0)),
                layer_sizes=[int(size) for size in values.get('layer_sizes', '').split(',') if size],
                init_seed=int(values.get('init_seed', 0)),
                shuffle_seed=int(values.get('shuffle_seed', 0)),
                schema_version=int(values.get('schema_version', SCHEMA_VERSION)),
                extra=extra,
            )
        except ValueError as e:
            raise FormatError(f"Bad metadata value: {e}") from e


@dataclass
class Checkpoint:
    """Weights, mask and metadata of one (sub)network."""
    params: ParamSet
    mask: Mask
    meta: CheckpointMeta = field(default_factory=CheckpointMeta)

    @property
    def density(self) -> float:
        return self.mask.density

    @property
    def kept(self) -> int:
        return self.mask.kept

    def validate(self) -> None:
        """Check mask alignment and that weights are zero wherever the mask is zero."""
        self.mask.check_aligned(self.params)
        for name in self.mask:
            if np.any(self.params[name][~self.mask[name]] != 0):
                raise DomainError(f"Checkpoint weight '{name}' is nonzero outside its mask")
        if abs(self.meta.density - self.mask.density) * max(self.mask.total, 1) > 1.0 + 1e-9:
            raise DomainError(
                f"Metadata density {self.meta.density} disagrees with mask density {self.mask.density}"
            )

    def equals(self, other: 'Checkpoint') -> bool:
        return self.params.equals(other.params) and self.mask.equals(other.mask) and self.meta == other.meta


def _pack_str(text: str) -> bytes:
    encoded = text.encode('utf-8')
    return struct.pack('<I', len(encoded)) + encoded


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize a checkpoint to LPCK bytes."""
    parts = [MAGIC, struct.pack('<I', FORMAT_VERSION)]
    parts.append(_pack_str("\n".join(ckpt.meta.to_lines())))

    tensors: List[Tuple[str, int, np.ndarray]] = []
    for name, tensor in ckpt.params.items():
        tensors.append((PARAM_PREFIX + name, DTYPE_FLOAT32, tensor))
    for name in ckpt.mask:
        tensors.append((MASK_PREFIX + name, DTYPE_MASK_BITS, ckpt.mask[name]))

    parts.append(struct.pack('<I', len(tensors)))
    for name, tag, array in tensors:
        parts.append(_pack_str(name))
        parts.append(struct.pack('<BI', tag, array.ndim))
        parts.append(struct.pack(f'<{array.ndim}I', *array.shape))
        if tag == DTYPE_FLOAT32:
            parts.append(np.ascontiguousarray(array, dtype='<f4').tobytes())
        else:
            parts.append(np.packbits(array.ravel().astype(np.uint8), bitorder='little').tobytes())

    payload = b"".join(parts)
    return payload + struct.pack('<I', zlib.crc32(payload) & 0xFFFFFFFF)


class _Reader:
    """Cursor over a byte buffer that reports truncation with its offset."""

    def __init__(self, raw: bytes, end: int):
        self.raw = raw
        self.end = end
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > self.end:
            raise FormatError(f"Truncated LPCK file while reading {what}", offset=self.offset)
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack('<I', self.take(4, what))[0]

    def text(self, what: str) -> str:
        length = self.u32(f"{what} length")
        start = self.offset
        try:
            return self.take(length, what).decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError(f"Invalid UTF-8 in {what}", offset=start) from e


def decode_checkpoint(raw: bytes) -> Checkpoint:
    """Parse LPCK bytes; raises FormatError or CorruptionError."""
    if len(raw) < 8:
        raise FormatError("Truncated LPCK header", offset=len(raw))
    if raw[:4] != MAGIC:
        raise FormatError(f"Bad magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    (version,) = struct.unpack_from('<I', raw, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported LPCK version {version}", offset=4)
    if len(raw) < 12:
        raise FormatError("Truncated LPCK file: no checksum", offset=len(raw))

    end = len(raw) - 4
    (stored_crc,) = struct.unpack_from('<I', raw, end)
    if zlib.crc32(raw[:end]) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError("LPCK checksum mismatch", offset=end)

    reader = _Reader(raw, end)
    reader.offset = 8
    meta_text = reader.text("metadata block")
    meta = CheckpointMeta.from_lines(meta_text.split("\n"))

    params: Dict[str, np.ndarray] = {}
    mask_bits: Dict[str, np.ndarray] = {}
    count = reader.u32("tensor count")
    for _ in range(count):
        name_offset = reader.offset
        name = reader.text("tensor name")
        tag_offset = reader.offset
        tag, ndim = struct.unpack('<BI', reader.take(5, f"header of '{name}'"))
        dims = struct.unpack(f'<{ndim}I', reader.take(4 * ndim, f"dims of '{name}'"))
        size = int(np.prod(dims)) if ndim else 1
        if tag == DTYPE_FLOAT32 and name.startswith(PARAM_PREFIX):
            data = np.frombuffer(reader.take(4 * size, f"data of '{name}'"), dtype='<f4')
            params[name[len(PARAM_PREFIX):]] = data.astype(DTYPE).reshape(dims)
        elif tag == DTYPE_MASK_BITS and name.startswith(MASK_PREFIX):
            packed = np.frombuffer(reader.take((size + 7) // 8, f"data of '{name}'"), dtype=np.uint8)
            bits = np.unpackbits(packed, count=size, bitorder='little').astype(np.bool_)
            mask_bits[name[len(MASK_PREFIX):]] = bits.reshape(dims)
        elif tag not in (DTYPE_FLOAT32, DTYPE_MASK_BITS):
            raise FormatError(f"Unknown dtype tag {tag} for tensor '{name}'", offset=tag_offset)
        else:
            raise FormatError(f"Tensor '{name}' has unexpected name prefix for its dtype", offset=name_offset)

    if reader.offset != end:
        raise FormatError("Trailing bytes before checksum", offset=reader.offset)

    return Checkpoint(params=ParamSet(params), mask=Mask(mask_bits), meta=meta)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """
    Validate and write a checkpoint.

    Args:
        ckpt: Checkpoint to persist
        path: Output file path (parent directories are created)

    Returns:
        The written path
    """
    ckpt.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(ckpt))
    logger.debug(f"save_checkpoint: wrote {path} (density={ckpt.density:.4f})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read and validate a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise DataLoadError(f"Checkpoint file not found: {path}")
    ckpt = decode_checkpoint(path.read_bytes())
    ckpt.validate()
    return ckpt


def _manifest_int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError as e:
        raise FormatError(f"Manifest key '{key}' needs an integer, got {text!r}") from e


@dataclass
class RunManifest:
    """Index of an IMP run directory."""
    checkpoint_files: List[str]
    rewind_file: Optional[str] = REWIND_FILE
    config_lines: List[str] = field(default_factory=list)
    dataset_fingerprint: str = ""
    created_at: str = ""

    def to_text(self) -> str:
        lines = [
            f"created_at={self.created_at}",
            f"dataset_fingerprint={self.dataset_fingerprint}",
            f"rewind={self.rewind_file or ''}",
            f"checkpoint_count={len(self.checkpoint_files)}",
        ]
        lines.extend(f"checkpoint.{t}={name}" for t, name in enumerate(self.checkpoint_files))
        lines.extend(f"config.{line}" for line in self.config_lines)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> 'RunManifest':
        values: Dict[str, str] = {}
        files: Dict[int, str] = {}
        config_lines: List[str] = []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition('=')
            if not sep:
                raise FormatError(f"Manifest line without '=': {line!r}")
            if key.startswith("checkpoint."):
                files[_manifest_int(key[len("checkpoint."):], key)] = value
            elif key.startswith("config."):
                config_lines.append(f"{key[len('config.'):]}={value}")
            else:
                values[key] = value

        expected = _manifest_int(values.get('checkpoint_count', str(len(files))), 'checkpoint_count')
        if sorted(files) != list(range(expected)):
            raise FormatError(f"Manifest lists checkpoints {sorted(files)}, expected 0..{expected - 1}")
        return cls(
            checkpoint_files=[files[t] for t in range(expected)],
            rewind_file=values.get('rewind') or None,
            config_lines=config_lines,
            dataset_fingerprint=values.get('dataset_fingerprint', ''),
            created_at=values.get('created_at', ''),
        )


class CheckpointStore:
    """
    Directory-backed storage for one IMP run.

    Design:
    - One LPCK file per IMP iteration (checkpoint_000.lpck, ...) plus rewind.lpck
    - manifest.txt lists the files, echoes the run config and fingerprints the data
    - Files are write-once; loading validates every listed file
    """

    def __init__(self, run_dir: Union[str, Path]):
        """
        Initialize CheckpointStore.

        Args:
            run_dir: Run directory
        """
        self.run_dir = Path(run_dir)

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / MANIFEST_NAME

    @staticmethod
    def checkpoint_name(t: int) -> str:
        return f"checkpoint_{t:03d}.lpck"

    def save_checkpoint(self, t: int, ckpt: Checkpoint) -> Path:
        return save_checkpoint(ckpt, self.run_dir / self.checkpoint_name(t))

    def save_run(
        self,
        checkpoints: List[Checkpoint],
        rewind: Optional[Checkpoint],
        config_lines: List[str],
        dataset_fingerprint: str
    ) -> RunManifest:
        """
        Persist every checkpoint, the rewind point and the manifest.

        Returns:
            The written RunManifest
        """
        self.run_dir.mkdir(parents=True, exist_ok=True)
        names = []
        for t, ckpt in enumerate(checkpoints):
            self.save_checkpoint(t, ckpt)
            names.append(self.checkpoint_name(t))
        if rewind is not None:
            save_checkpoint(rewind, self.run_dir / REWIND_FILE)

        manifest = RunManifest(
            checkpoint_files=names,
            rewind_file=REWIND_FILE if rewind is not None else None,
            config_lines=list(config_lines),
            dataset_fingerprint=dataset_fingerprint,
            created_at=datetime.now().isoformat(),
        )
        self.manifest_path.write_text(manifest.to_text(), encoding='utf-8')
        logger.info(f"save_run: stored {len(names)} checkpoints in {self.run_dir}")
        return manifest

    def read_manifest(self) -> RunManifest:
        if not self.manifest_path.exists():
            raise DataLoadError(f"No run manifest at {self.manifest_path}",
                                recovery_hint="Run 'imp run' first or check --run.")
        return RunManifest.from_text(self.manifest_path.read_text(encoding='utf-8'))

    def load_run(self) -> Tuple[List[Checkpoint], Optional[Checkpoint], RunManifest]:
        """
        Load every checkpoint listed in the manifest.

        Returns:
            Tuple of (checkpoints in t order, rewind checkpoint or None, manifest)
        """
        manifest = self.read_manifest()
        checkpoints = [load_checkpoint(self.run_dir / name) for name in manifest.checkpoint_files]
        rewind = None
        if manifest.rewind_file:
            rewind = load_checkpoint(self.run_dir / manifest.rewind_file)
        return checkpoints, rewind, manifest
