"""
IMP Engine Module
=================
Iterative Magnitude Pruning with rewinding: dense training with a rewind
snapshot at epoch j, then T rounds of prune / rewind / retrain. The ordered
checkpoints t = 0..T form the pool the Lottery Pools recipes draw from.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union
import pandas as pd
from tqdm import tqdm

from error_handler import DomainError, FormatError
from tensor_ops import ParamSet
from pruning import Mask, apply_mask, prune_within_mask, target_count
from mlp_model import evaluate, init_params
from training import train
from data_loader import Dataset
from checkpoint_store import Checkpoint, CheckpointMeta, CheckpointStore
from experiment_config import ExperimentConfig, ImpConfig, RewindMode, parse_config_lines

logger = logging.getLogger(__name__)

__all__ = ['ImpConfig', 'RewindMode', 'ImpRun', 'ImpEngine', 'run_imp', 'load_run']


@dataclass
class ImpRun:
    """Checkpoints t = 0..T (t = 0 is the trained dense network) and the rewind point."""
    checkpoints: List[Checkpoint]
    rewind_params: ParamSet
    config: ImpConfig
    history: List[List[Dict[str, float]]] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        """T, the index of the last checkpoint."""
        return len(self.checkpoints) - 1

    def __getitem__(self, t: int) -> Checkpoint:
        return self.checkpoints[t]

    def __len__(self) -> int:
        return len(self.checkpoints)

    def check_index(self, t: int) -> None:
        if not 0 <= t <= self.iterations:
            raise DomainError(f"Checkpoint index {t} outside [0, {self.iterations}]")

    def densities(self) -> List[float]:
        return [ckpt.density for ckpt in self.checkpoints]

    def summary(self, dataset: Optional[Dataset] = None) -> pd.DataFrame:
        """
        One row per checkpoint: t, density, kept weights and (with a dataset) accuracy and loss.
        """
        rows = []
        for t, ckpt in enumerate(self.checkpoints):
            row = {'t': t, 'density': ckpt.density, 'kept': ckpt.kept}
            if dataset is not None:
                row['accuracy'], row['loss'] = evaluate(ckpt.params, ckpt.mask, dataset)
            rows.append(row)
        return pd.DataFrame(rows)


class ImpEngine:
    """
    Runs IMP and persists the resulting pool.

    Design:
    - Round t prunes the final weights of round t-1 within their mask, to the
      schedule count round((1 - p)^t * total) so densities track (1 - p)^t
    - Surviving weights are reset to the rewind point (theta_j, or theta_0
      under rewind_to_init) and retrained with a fresh optimizer
    - With an output path, every checkpoint, the rewind point and a manifest
      are written through CheckpointStore
    """

    def __init__(self, output_path: Optional[Union[str, Path]] = None):
        """
        Initialize ImpEngine.

        Args:
            output_path: Run directory; None keeps the run in memory only
        """
        self.output_path = Path(output_path) if output_path is not None else None
        self.store = CheckpointStore(self.output_path) if self.output_path is not None else None

    def _meta(self, config: ImpConfig, t: int, mask: Mask, extra: Dict[str, str]) -> CheckpointMeta:
        return CheckpointMeta(
            imp_iteration=t,
            density=mask.density,
            rewind_epoch=config.effective_rewind_epoch,
            prune_fraction=config.prune_fraction,
            layer_sizes=list(config.model.layer_sizes),
            init_seed=config.model.init_seed,
            shuffle_seed=config.train.shuffle_seed,
            extra=extra,
        )

    def run(
        self,
        config: ImpConfig,
        data: Tuple[Dataset, Optional[Dataset]],
        config_lines: Optional[List[str]] = None,
        show_progress: bool = False
    ) -> ImpRun:
        """
        Run the full IMP pipeline.

        Args:
            config: IMP configuration
            data: Tuple of (train, val)
            config_lines: Config echo stored in the run manifest (defaults to the echo of `config`)
            show_progress: Whether to show a progress bar over rounds

        Returns:
            ImpRun with T + 1 checkpoints
        """
        train_set, _ = data
        if train_set.d_in != config.model.layer_sizes[0]:
            raise DomainError(
                f"Data dimension {train_set.d_in} does not match input layer {config.model.layer_sizes[0]}"
            )
        if train_set.n_classes > config.model.n_classes:
            raise DomainError(
                f"Data has {train_set.n_classes} classes, model outputs {config.model.n_classes}"
            )

        train_config = replace(config.train, rewind_epoch=config.effective_rewind_epoch)
        initial = init_params(config.model)
        mask = Mask.full(initial)
        total = mask.total

        dense = train(initial, mask, data, train_config, show_progress=show_progress)
        rewind_params = dense.rewind_params
        logger.info(
            f"run: dense network trained, rewind point at epoch {train_config.rewind_epoch} "
            f"({config.rewind_mode.value})"
        )

        checkpoints = [Checkpoint(dense.final_params, mask, self._meta(config, 0, mask, _final_stats(dense.history)))]
        histories = [dense.history]
        previous = dense.final_params

        rounds = range(1, config.iterations + 1)
        if show_progress:
            rounds = tqdm(rounds, desc="IMP rounds")

        for t in rounds:
            keep = target_count(total, (1.0 - config.prune_fraction) ** t)
            if keep >= mask.kept:
                logger.warning(f"run: round {t} schedule keeps {keep} of {mask.kept}, nothing pruned")
                keep = mask.kept
            mask = prune_within_mask(previous, mask, keep)
            start = apply_mask(rewind_params, mask)
            result = train(start, mask, data, train_config, show_progress=False)
            final = apply_mask(result.final_params, mask)

            checkpoints.append(Checkpoint(final, mask, self._meta(config, t, mask, _final_stats(result.history))))
            histories.append(result.history)
            previous = final
            logger.info(f"run: round {t}/{config.iterations} density={mask.density:.4f} {_final_stats(result.history)}")

        rewind_ckpt = Checkpoint(
            rewind_params, Mask.full(rewind_params),
            self._meta(config, 0, Mask.full(rewind_params), {'role': 'rewind'})
        )
        run = ImpRun(checkpoints=checkpoints, rewind_params=rewind_params, config=config, history=histories)

        if self.store is not None:
            if config_lines is None:
                config_lines = ExperimentConfig(imp=config).to_lines()
            self.store.save_run(checkpoints, rewind_ckpt, config_lines, train_set.fingerprint())
        return run

    def load_run(self, run_dir: Optional[Union[str, Path]] = None) -> ImpRun:
        """
        Reconstruct an ImpRun from a run directory.

        Args:
            run_dir: Run directory (defaults to this engine's output path)

        Returns:
            ImpRun
        """
        store = CheckpointStore(run_dir) if run_dir is not None else self.store
        if store is None:
            raise DomainError("load_run needs a run directory")
        checkpoints, rewind, manifest = store.load_run()
        if not checkpoints:
            raise DomainError(f"Run at {store.run_dir} holds no checkpoints")
        if not manifest.config_lines:
            raise FormatError(
                f"Manifest {store.manifest_path} carries no config echo",
                recovery_hint="Re-run `imp run` so the manifest records the IMP config."
            )
        config = parse_config_lines(manifest.config_lines, source=str(store.manifest_path)).imp
        rewind_params = rewind.params if rewind is not None else checkpoints[0].params
        return ImpRun(checkpoints=checkpoints, rewind_params=rewind_params, config=config)


def _final_stats(history: List[Dict[str, float]]) -> Dict[str, str]:
    """Last-epoch train loss / val accuracy as checkpoint metadata strings."""
    if not history:
        return {}
    return {key: repr(float(value)) for key, value in history[-1].items() if key != 'epoch'}


def run_imp(
    config: ImpConfig,
    data: Tuple[Dataset, Optional[Dataset]],
    output_path: Optional[Union[str, Path]] = None,
    config_lines: Optional[List[str]] = None,
    show_progress: bool = False
) -> ImpRun:
    """Run IMP; persists the run when `output_path` is given."""
    return ImpEngine(output_path).run(config, data, config_lines=config_lines, show_progress=show_progress)


def load_run(run_dir: Union[str, Path]) -> ImpRun:
    """Load a persisted IMP run."""
    return ImpEngine().load_run(run_dir)
