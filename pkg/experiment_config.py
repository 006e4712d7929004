"""
Experiment Configuration Module
===============================
IMP run configuration: model, training schedule, pruning rounds and the data
block. Configs are read from plain key=value files or taken from named presets.
"""

import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from error_handler import ConfigError
from mlp_model import MlpConfig
from training import TrainConfig

logger = logging.getLogger(__name__)


class RewindMode(Enum):
    """Where surviving weights are reset to before each retraining round."""
    REWIND_TO_J = "rewind_to_j"
    REWIND_TO_INIT = "rewind_to_init"


@dataclass
class ImpConfig:
    """Configuration of one IMP run."""
    model: MlpConfig = field(default_factory=MlpConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    iterations: int = 3
    prune_fraction: float = 0.2
    rewind_mode: RewindMode = RewindMode.REWIND_TO_J

    def __post_init__(self):
        if isinstance(self.rewind_mode, str):
            self.rewind_mode = _parse_rewind_mode(self.rewind_mode)
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ConfigError(f"prune_fraction must lie in (0, 1), got {self.prune_fraction}")

    @property
    def effective_rewind_epoch(self) -> int:
        """rewind_to_init behaves as j = 0."""
        return 0 if self.rewind_mode is RewindMode.REWIND_TO_INIT else self.train.rewind_epoch


@dataclass
class ExperimentConfig:
    """ImpConfig plus the datasets it trains and tests on."""
    imp: ImpConfig = field(default_factory=ImpConfig)
    data: Optional[str] = None
    test_data: Optional[str] = None
    val_fraction: float = 0.1
    split_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")

    def to_lines(self) -> List[str]:
        """Echo as key=value lines, readable back by parse_config_lines."""
        values = _flatten(self)
        return [f"{key}={_format_value(values[key])}" for key in CONFIG_KEYS if values[key] is not None]

    def with_seed(self, seed: int) -> 'ExperimentConfig':
        """Copy with init and shuffle seeds offset by `seed` (multi-seed runs)."""
        values = _flatten(self)
        values['init_seed'] = self.imp.model.init_seed + seed
        values['shuffle_seed'] = self.imp.train.shuffle_seed + seed
        return _build(values)


def _parse_rewind_mode(value: str) -> RewindMode:
    try:
        return RewindMode(value.strip())
    except ValueError as e:
        choices = ", ".join(mode.value for mode in RewindMode)
        raise ConfigError(f"Unknown rewind_mode '{value}' (choose {choices})") from e


def _int_list(value: str) -> List[int]:
    return [int(item) for item in value.replace('[', '').replace(']', '').split(',') if item.strip()]


def _optional_str(value: str) -> Optional[str]:
    return value or None


# key -> parser; order is the echo order of to_lines()
_PARSERS: Dict[str, Callable[[str], Any]] = {
    'layer_sizes': _int_list,
    'init_seed': int,
    'epochs': int,
    'batch_size': int,
    'base_lr': float,
    'lr_drop_factor': float,
    'lr_drop_epochs': _int_list,
    'warmup_epochs': int,
    'momentum': float,
    'weight_decay': float,
    'rewind_epoch': int,
    'shuffle_seed': int,
    'iterations': int,
    'prune_fraction': float,
    'rewind_mode': _parse_rewind_mode,
    'data': _optional_str,
    'test_data': _optional_str,
    'val_fraction': float,
    'split_seed': int,
}

CONFIG_KEYS = list(_PARSERS)
_MODEL_KEYS = {f.name for f in fields(MlpConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _flatten(config: ExperimentConfig) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key in _MODEL_KEYS:
        values[key] = getattr(config.imp.model, key)
    for key in _TRAIN_KEYS:
        values[key] = getattr(config.imp.train, key)
    values.update(
        iterations=config.imp.iterations,
        prune_fraction=config.imp.prune_fraction,
        rewind_mode=config.imp.rewind_mode,
        data=config.data,
        test_data=config.test_data,
        val_fraction=config.val_fraction,
        split_seed=config.split_seed,
    )
    return values


def _build(values: Dict[str, Any]) -> ExperimentConfig:
    defaults = _flatten(ExperimentConfig())
    merged = {**defaults, **values}
    model = MlpConfig(**{key: merged[key] for key in _MODEL_KEYS})
    train = TrainConfig(**{key: merged[key] for key in _TRAIN_KEYS})
    imp = ImpConfig(
        model=model,
        train=train,
        iterations=merged['iterations'],
        prune_fraction=merged['prune_fraction'],
        rewind_mode=merged['rewind_mode'],
    )
    return ExperimentConfig(
        imp=imp,
        data=merged['data'],
        test_data=merged['test_data'],
        val_fraction=merged['val_fraction'],
        split_seed=merged['split_seed'],
    )


def _format_value(value: Any) -> str:
    if isinstance(value, RewindMode):
        return value.value
    if isinstance(value, (list, tuple)):
        return ",".join(str(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_lines(lines: List[str], source: str = "<config>") -> ExperimentConfig:
    """
    Parse key=value lines; '#' starts a comment, blank lines are skipped.

    Args:
        lines: Config lines
        source: Name used in error messages

    Returns:
        ExperimentConfig (unspecified keys take their defaults)
    """
    values: Dict[str, Any] = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{number}: expected key=value, got '{line}'")
        if key not in _PARSERS:
            raise ConfigError(
                f"{source}:{number}: unknown key '{key}'",
                recovery_hint=f"Known keys: {', '.join(CONFIG_KEYS)}"
            )
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key '{key}'")
        try:
            values[key] = _PARSERS[key](value.strip())
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"{source}:{number}: bad value for '{key}': {e}") from e

    config = _build(values)
    logger.debug(f"parse_config_lines: {source} -> {config}")
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read an experiment config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    return parse_config_lines(path.read_text(encoding='utf-8').splitlines(), source=str(path))


PRESETS: Dict[str, Dict[str, Any]] = {
    'desk_synth': {
        'layer_sizes': [16, 32, 16, 4],
        'epochs': 12,
        'batch_size': 32,
        'base_lr': 0.05,
        'lr_drop_epochs': [8],
        'weight_decay': 1e-4,
        'rewind_epoch': 1,
        'iterations': 5,
        'prune_fraction': 0.2,
        'data': "synth:classes=4,dim=16,per_class=300,spread=0.8,seed=0",
        'test_data': "synth:classes=4,dim=16,per_class=100,spread=0.8,seed=0,noise_seed=1",
    },
    'desk_mnist': {
        'layer_sizes': [784, 64, 32, 10],
        'epochs': 10,
        'batch_size': 64,
        'base_lr': 0.05,
        'lr_drop_epochs': [7],
        'rewind_epoch': 1,
        'iterations': 10,
        'prune_fraction': 0.2,
        'data': "idx:train-images-idx3-ubyte,train-labels-idx1-ubyte,limit=5000",
        'test_data': "idx:t10k-images-idx3-ubyte,t10k-labels-idx1-ubyte,limit=2000",
    },
    'cifar_schedule': {
        'epochs': 182,
        'batch_size': 128,
        'base_lr': 0.1,
        'lr_drop_factor': 10.0,
        'lr_drop_epochs': [91, 136],
        'weight_decay': 1e-4,
        'momentum': 0.9,
        'rewind_epoch': 9,
        'iterations': 19,
        'prune_fraction': 0.2,
    },
    'imagenet_schedule': {
        'epochs': 90,
        'batch_size': 1024,
        'base_lr': 0.4,
        'lr_drop_factor': 10.0,
        'lr_drop_epochs': [30, 60, 80],
        'warmup_epochs': 5,
        'weight_decay': 1e-4,
        'momentum': 0.9,
        'rewind_epoch': 5,
        'iterations': 9,
        'prune_fraction': 0.2,
    },
}


def get_preset(name: str) -> ExperimentConfig:
    """Build a named preset."""
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset '{name}'", recovery_hint=f"Presets: {', '.join(PRESETS)}")
    return _build(PRESETS[name])
