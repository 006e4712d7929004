"""
Main Orchestration Module
==========================
Command-line surface for the Lottery Pools toolkit: IMP runs, pooling
recipes, baselines, ensembles, analysis tables and checkpoint evaluation.

Human-readable progress goes to stdout; results go to files (LPCK
checkpoints, CSV tables, JSONL search logs).
"""

import os
import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd

from error_handler import ApplicationError, ConfigError, DomainError, format_error, get_user_friendly_error
from data_loader import DataLoader, Dataset, split
from checkpoint_store import Checkpoint, CheckpointStore, load_checkpoint, save_checkpoint
from experiment_config import ExperimentConfig, PRESETS, get_preset, load_config, parse_config_lines
from imp_engine import ImpEngine, ImpRun
from mlp_model import evaluate
from lottery_pools import (
    MEMBERSHIPS, PRUNE_DURING, PRUNE_MODES, CoefficientPool, LotteryPools
)
from baselines import DEFAULT_EMA_DECAY, ema_pool, ensemble_members, output_ensemble, swa_pool
import analysis

logger = logging.getLogger(__name__)

THREADS_ENV = "LOTPOOL_THREADS"

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_APPLICATION_ERROR = 2


class Pipeline:
    """
    Orchestrates the toolkit stages behind the CLI.

    Design:
    - A run directory is self-describing: its manifest echoes the experiment
      config, so later stages reload the same data splits from it
    - Validation split drives every search; the test set only reports
    """

    def __init__(self, data_root: str = ".", threads: int = 1, show_progress: bool = True):
        """
        Initialize pipeline.

        Args:
            data_root: Directory relative IDX paths resolve against
            threads: Worker threads for independent evaluations
            show_progress: Whether to show progress bars
        """
        self.data_loader = DataLoader(data_root)
        self.threads = threads
        self.show_progress = show_progress

    # --- data -------------------------------------------------------------

    def datasets(self, config: ExperimentConfig, test_data: Optional[str] = None) -> Tuple[Dataset, Dataset, Optional[Dataset]]:
        """Load (train, val, test) for an experiment config; test is None when unconfigured."""
        if not config.data:
            raise ConfigError("Experiment config has no data spec", recovery_hint="Add a data=... line.")
        full = self.data_loader.load(config.data)
        train_set, val_set = split(full, config.val_fraction, config.split_seed)
        spec = test_data or config.test_data
        test_set = self.data_loader.load(spec) if spec else None
        return train_set, val_set, test_set

    def open_run(self, run_dir: str) -> Tuple[ImpRun, ExperimentConfig]:
        """Load a run and the experiment config echoed in its manifest."""
        store = CheckpointStore(run_dir)
        manifest = store.read_manifest()
        config = parse_config_lines(manifest.config_lines, source=str(store.manifest_path))
        run = ImpEngine().load_run(run_dir)
        return run, config

    def _run_data(self, run_dir: str, test_data: Optional[str] = None, need_test: bool = False):
        run, config = self.open_run(run_dir)
        train_set, val_set, test_set = self.datasets(config, test_data)
        expected = CheckpointStore(run_dir).read_manifest().dataset_fingerprint
        if expected and train_set.fingerprint() != expected:
            logger.warning(f"Training data of {run_dir} no longer matches the manifest fingerprint")
        if need_test and test_set is None:
            raise ConfigError(
                f"No test set for {run_dir}",
                recovery_hint="Set test_data in the config or pass --test-data."
            )
        return run, val_set, test_set

    # --- stages -----------------------------------------------------------

    def run_imp(self, config: ExperimentConfig, out: str, seeds: Optional[List[int]] = None) -> List[ImpRun]:
        """Run IMP once, or once per seed into <out>/seed_<k>."""
        jobs = [(config, Path(out))] if not seeds else [
            (config.with_seed(seed), Path(out) / f"seed_{seed}") for seed in seeds
        ]
        runs = []
        for job_config, job_dir in jobs:
            print(f"IMP: T={job_config.imp.iterations} p={job_config.imp.prune_fraction} "
                  f"rewind={job_config.imp.rewind_mode.value} -> {job_dir}")
            train_set, val_set, _ = self.datasets(job_config)
            engine = ImpEngine(job_dir)
            run = engine.run(job_config.imp, (train_set, val_set), config_lines=job_config.to_lines(),
                             show_progress=self.show_progress)
            for t, ckpt in enumerate(run.checkpoints):
                accuracy, _ = evaluate(ckpt.params, ckpt.mask, val_set)
                print(f"  t={t:2d} density={ckpt.density:.4f} val_acc={accuracy:.4f}")
            runs.append(run)
        return runs

    def run_pool(
        self,
        recipe: str,
        run_dir: str,
        out: str,
        t: int = 0,
        coeffs: Optional[CoefficientPool] = None,
        limit: Optional[int] = None,
        prune_mode: str = PRUNE_DURING,
        membership: str = "all",
        average: bool = False
    ) -> Checkpoint:
        """Run one pooling recipe ('interp', 'avg' or 'dense') and save the result with its search log."""
        run, val_set, _ = self._run_data(run_dir)
        pools = LotteryPools(run, val_set, threads=self.threads)
        if recipe == 'interp':
            result = pools.interpolate(t, coeffs, limit=limit, prune_mode=prune_mode, membership=membership)
        elif recipe == 'avg':
            result = pools.average(t, limit=limit, membership=membership)
        elif recipe == 'dense':
            t = 0
            dense_coeffs = CoefficientPool([0.5]) if average else coeffs
            result = pools.strengthen_dense(dense_coeffs, limit=limit, membership=membership)
        else:
            raise DomainError(f"Unknown pool recipe '{recipe}'")

        save_checkpoint(result, out)
        log_path = pools.write_search_log(f"{out}.search.jsonl")
        before = evaluate(run[t].params, run[t].mask, val_set)[0]
        after = evaluate(result.params, result.mask, val_set)[0]
        accepted = sum(1 for record in pools.records if record['accepted'])
        print(f"pool {recipe}: t={t} density={result.density:.4f} accepted={accepted}/{len(pools.records)} "
              f"val_acc {before:.4f} -> {after:.4f}")
        print(f"  wrote {out} and {log_path}")
        return result

    def run_baseline(self, method: str, run_dir: str, t: int, decay: float = DEFAULT_EMA_DECAY,
                     out: Optional[str] = None) -> Checkpoint:
        """Run SWA or EMA for target t."""
        run, val_set, _ = self._run_data(run_dir)
        if method == 'swa':
            result = swa_pool(run, t, val_set)
        elif method == 'ema':
            result = ema_pool(run, t, decay, val_set)
        else:
            raise DomainError(f"Unknown baseline '{method}'")
        accuracy = evaluate(result.params, result.mask, val_set)[0]
        print(f"baseline {method}: t={t} density={result.density:.4f} val_acc={accuracy:.4f}")
        if out:
            save_checkpoint(result, out)
            print(f"  wrote {out}")
        return result

    def run_ensemble(self, run_dir: str, t: int, k: int = 3, test_data: Optional[str] = None,
                     csv: Optional[str] = None) -> float:
        """Evaluate the k-member output ensemble around t on the test set."""
        run, val_set, test_set = self._run_data(run_dir, test_data, need_test=True)
        run.check_index(t)
        members = ensemble_members(run, t, k)
        accuracy = output_ensemble([run[i] for i in members], test_set, threads=self.threads)
        print(f"ensemble: t={t} members={members} test_acc={accuracy:.4f} "
              f"forward_passes_per_sample={len(members)}")
        if csv:
            table = analysis.ensemble_comparison(run, val_set, test_set, k=k, ts=[t], threads=self.threads)
            _write_csv(table, csv)
        return accuracy

    def run_analysis(
        self,
        kind: str,
        run_dirs: List[str],
        csv: str,
        test_data: Optional[str] = None,
        a: Optional[int] = None,
        b: Optional[int] = None,
        mode: Optional[str] = None,
        arms: Optional[List[str]] = None,
        ts: Optional[List[int]] = None,
        coeffs: Optional[CoefficientPool] = None,
        decay: float = DEFAULT_EMA_DECAY
    ) -> pd.DataFrame:
        """Produce one analysis table; ablate/compare aggregate across several runs."""
        tables = []
        for run_dir in run_dirs:
            run, val_set, test_set = self._run_data(run_dir, test_data, need_test=True)
            if kind == 'heatmap':
                table = analysis.pairwise_heatmap(run, test_set, threads=self.threads,
                                                  show_progress=self.show_progress)
                matrix = analysis.to_matrix(table)
                print(f"heatmap {run_dir}: adjacent mean accuracy {analysis.adjacent_mean(matrix):.4f}")
            elif kind == 'path':
                if a is None or b is None:
                    raise DomainError("analyze path needs --a and --b")
                run.check_index(a)
                run.check_index(b)
                table = analysis.interpolation_path(run[a], run[b], test_set)
            elif kind == 'disagreement':
                table = analysis.disagreement_matrix(run, test_set)
            elif kind == 'ablate':
                if mode is None or not arms:
                    raise DomainError("analyze ablate needs --mode and --arms")
                parsed = [_parse_arm(mode, arm) for arm in arms]
                table = analysis.ablate(run, mode, parsed, val_set, test_set, ts=ts,
                                        threads=self.threads, show_progress=self.show_progress)
            elif kind == 'compare':
                table = analysis.compare_methods(run, val_set, test_set, coeffs=coeffs, decay=decay, ts=ts,
                                                 threads=self.threads, show_progress=self.show_progress)
            else:
                raise DomainError(f"Unknown analysis '{kind}'")
            tables.append(table)

        if len(tables) == 1:
            result = tables[0]
        elif kind == 'ablate':
            result = analysis.aggregate_seeds(tables, ['mode', 'arm', 't'])
        elif kind == 'compare':
            result = analysis.aggregate_seeds(tables, ['t', 'method'])
        else:
            raise DomainError(f"analyze {kind} takes a single run")
        _write_csv(result, csv)
        return result

    def evaluate_checkpoint(self, ckpt_path: str, data: str) -> Tuple[float, float]:
        """Accuracy and loss of a saved checkpoint on a dataset."""
        ckpt = load_checkpoint(ckpt_path)
        dataset = self.data_loader.load(data)
        accuracy, loss = evaluate(ckpt.params, ckpt.mask, dataset)
        print(f"eval: {ckpt_path} density={ckpt.density:.4f} accuracy={accuracy:.4f} loss={loss:.4f}")
        return accuracy, loss


def _write_csv(table: pd.DataFrame, path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    print(f"  wrote {len(table)} rows to {path}")


def _parse_arm(mode: str, arm: str):
    if mode in ('candidate_count', 'coeff_count'):
        try:
            return int(arm)
        except ValueError as e:
            raise DomainError(f"{mode} arms must be integers, got '{arm}'") from e
    return arm


def _coeff_pool(text: str) -> CoefficientPool:
    try:
        return CoefficientPool.parse(text)
    except DomainError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _int_list(text: str) -> List[int]:
    return [int(item) for item in text.split(',') if item.strip()]


def _str_list(text: str) -> List[str]:
    return [item.strip() for item in text.split(',') if item.strip()]


def resolve_threads(value: Optional[int]) -> int:
    """--threads, else LOTPOOL_THREADS, else 1."""
    if value is not None:
        return max(1, value)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as e:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got '{env}'") from e
    return 1


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(description='Lottery Pools desk toolkit')
    parser.add_argument('--threads', type=int, default=None,
                        help=f'Worker threads for independent evaluations (default: ${THREADS_ENV} or 1)')
    parser.add_argument('--log-level', default='WARNING',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging level')
    parser.add_argument('--data-root', default='.', help='Directory relative IDX paths resolve against')
    parser.add_argument('--no-progress', action='store_true', help='Disable progress bars')
    commands = parser.add_subparsers(dest='command', required=True)

    # imp run
    imp = commands.add_parser('imp', help='Iterative magnitude pruning')
    imp_sub = imp.add_subparsers(dest='action', required=True)
    imp_run = imp_sub.add_parser('run', help='Run IMP and write checkpoints + manifest')
    source = imp_run.add_mutually_exclusive_group(required=True)
    source.add_argument('--config', help='key=value config file')
    source.add_argument('--preset', choices=sorted(PRESETS), help='Named preset')
    imp_run.add_argument('--out', required=True, help='Run directory')
    imp_run.add_argument('--seeds', type=_int_list, default=None,
                         help='Comma-separated seed offsets; one run per seed under <out>/seed_<k>')

    # pool interp|avg|dense
    pool = commands.add_parser('pool', help='Lottery Pools recipes')
    pool_sub = pool.add_subparsers(dest='action', required=True)
    for name, help_text in (('interp', 'Greedy interpolation recipe'),
                            ('avg', 'Averaging recipe (coefficient 0.5)'),
                            ('dense', 'Dense strengthening into checkpoint 0')):
        sub = pool_sub.add_parser(name, help=help_text)
        sub.add_argument('--run', required=True, help='Run directory')
        if name != 'dense':
            sub.add_argument('--t', type=int, required=True, help='Target checkpoint index')
        if name != 'avg':
            sub.add_argument('--coeffs', type=_coeff_pool, default=None,
                             help='Comma-separated coefficients (default: 11-value pool)')
        sub.add_argument('--limit', type=int, default=None, help='Use only the nearest N candidates')
        sub.add_argument('--membership', choices=MEMBERSHIPS, default='all', help='Candidate membership')
        if name == 'interp':
            sub.add_argument('--prune-mode', choices=PRUNE_MODES, default=PRUNE_DURING,
                             help='Prune inside each step or once at the end')
        if name == 'dense':
            sub.add_argument('--average', action='store_true', help='Use the fixed 0.5 averaging recipe')
        sub.add_argument('--out', required=True, help='Output checkpoint file')

    # baseline swa|ema
    baseline = commands.add_parser('baseline', help='SWA / EMA baselines')
    baseline_sub = baseline.add_subparsers(dest='action', required=True)
    for name in ('swa', 'ema'):
        sub = baseline_sub.add_parser(name)
        sub.add_argument('--run', required=True)
        sub.add_argument('--t', type=int, required=True)
        if name == 'ema':
            sub.add_argument('--decay', type=float, default=DEFAULT_EMA_DECAY)
        sub.add_argument('--out', default=None, help='Optional output checkpoint file')

    # ensemble eval
    ensemble = commands.add_parser('ensemble', help='Output (logit) ensemble')
    ensemble_sub = ensemble.add_subparsers(dest='action', required=True)
    ensemble_eval = ensemble_sub.add_parser('eval')
    ensemble_eval.add_argument('--run', required=True)
    ensemble_eval.add_argument('--t', type=int, required=True)
    ensemble_eval.add_argument('--k', type=int, default=3)
    ensemble_eval.add_argument('--test-data', default=None)
    ensemble_eval.add_argument('--csv', default=None, help='Also write the ensemble-vs-pool table')

    # analyze heatmap|path|disagreement|ablate|compare
    analyze = commands.add_parser('analyze', help='Analysis tables')
    analyze_sub = analyze.add_subparsers(dest='action', required=True)
    for name in ('heatmap', 'path', 'disagreement', 'ablate', 'compare'):
        sub = analyze_sub.add_parser(name)
        sub.add_argument('--run', required=True, type=_str_list,
                         help='Run directory (comma-separated list for ablate/compare aggregation)')
        sub.add_argument('--csv', required=True, help='Output CSV file')
        sub.add_argument('--test-data', default=None)
        if name == 'path':
            sub.add_argument('--a', type=int, required=True, help='Checkpoint weighted by alpha')
            sub.add_argument('--b', type=int, required=True, help='Checkpoint weighted by 1 - alpha')
        if name == 'ablate':
            sub.add_argument('--mode', required=True, choices=analysis.ABLATION_MODES)
            sub.add_argument('--arms', required=True, type=_str_list)
        if name in ('ablate', 'compare'):
            sub.add_argument('--ts', type=_int_list, default=None, help='Target checkpoints (default: all)')
        if name == 'compare':
            sub.add_argument('--coeffs', type=_coeff_pool, default=None)
            sub.add_argument('--decay', type=float, default=DEFAULT_EMA_DECAY)

    # eval
    eval_cmd = commands.add_parser('eval', help='Evaluate a checkpoint')
    eval_cmd.add_argument('--ckpt', required=True)
    eval_cmd.add_argument('--data', required=True, help='Data spec (idx:... or synth:...)')

    return parser


def _dispatch(args: argparse.Namespace, pipeline: Pipeline) -> None:
    if args.command == 'imp':
        config = load_config(args.config) if args.config else get_preset(args.preset)
        pipeline.run_imp(config, args.out, seeds=args.seeds)
    elif args.command == 'pool':
        pipeline.run_pool(
            args.action, args.run, args.out,
            t=getattr(args, 't', 0),
            coeffs=getattr(args, 'coeffs', None),
            limit=args.limit,
            prune_mode=getattr(args, 'prune_mode', PRUNE_DURING),
            membership=args.membership,
            average=getattr(args, 'average', False),
        )
    elif args.command == 'baseline':
        pipeline.run_baseline(args.action, args.run, args.t,
                              decay=getattr(args, 'decay', DEFAULT_EMA_DECAY), out=args.out)
    elif args.command == 'ensemble':
        pipeline.run_ensemble(args.run, args.t, k=args.k, test_data=args.test_data, csv=args.csv)
    elif args.command == 'analyze':
        pipeline.run_analysis(
            args.action, args.run, args.csv,
            test_data=args.test_data,
            a=getattr(args, 'a', None),
            b=getattr(args, 'b', None),
            mode=getattr(args, 'mode', None),
            arms=getattr(args, 'arms', None),
            ts=getattr(args, 'ts', None),
            coeffs=getattr(args, 'coeffs', None),
            decay=getattr(args, 'decay', DEFAULT_EMA_DECAY),
        )
    elif args.command == 'eval':
        pipeline.evaluate_checkpoint(args.ckpt, args.data)


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point with CLI argument parsing; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(name)s %(levelname)s %(message)s')

    try:
        pipeline = Pipeline(data_root=args.data_root, threads=resolve_threads(args.threads),
                            show_progress=not args.no_progress)
        _dispatch(args, pipeline)
    except ApplicationError as e:
        logger.debug(f"main: {format_error(e, context=args.command)}")
        print(f"Error: {get_user_friendly_error(e)}", file=sys.stderr)
        if e.recovery_hint:
            print(f"Hint: {e.recovery_hint}", file=sys.stderr)
        return EXIT_APPLICATION_ERROR
    except Exception as e:
        logger.exception("main: unexpected failure")
        print(f"Error: {get_user_friendly_error(e)}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
