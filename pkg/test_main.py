#!/usr/bin/env python3
"""
End-to-end CLI tests on a tiny synthetic config.
"""

import json
from pathlib import Path

import pandas as pd
import pytest

from error_handler import ConfigError
from checkpoint_store import load_checkpoint
from main import EXIT_APPLICATION_ERROR, EXIT_OK, THREADS_ENV, main, resolve_threads

TEST_DATA = "synth:classes=3,dim=8,per_class=30,spread=0.6,seed=0,noise_seed=1"

TINY_CONFIG = f"""\
# tiny desk run
layer_sizes=8,12,3
epochs=6
batch_size=16
base_lr=0.1
lr_drop_epochs=4
rewind_epoch=1
iterations=2
prune_fraction=0.2
data=synth:classes=3,dim=8,per_class=60,spread=0.6,seed=0
test_data={TEST_DATA}
val_fraction=0.2
"""


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """Run directory produced by `imp run` on the tiny config."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.cfg"
    config.write_text(TINY_CONFIG, encoding='utf-8')
    run_dir = root / "run"
    code = main(['--no-progress', 'imp', 'run', '--config', str(config), '--out', str(run_dir)])
    assert code == EXIT_OK
    return {'root': root, 'config': config, 'run': run_dir}


def test_imp_run_writes_pool(cli_run):
    run_dir = cli_run['run']
    assert (run_dir / 'manifest.txt').exists()
    assert sorted(p.name for p in run_dir.glob('checkpoint_*.lpck')) == [
        'checkpoint_000.lpck', 'checkpoint_001.lpck', 'checkpoint_002.lpck'
    ]
    manifest = (run_dir / 'manifest.txt').read_text(encoding='utf-8')
    assert 'config.iterations=2' in manifest
    assert 'dataset_fingerprint=' in manifest


def test_pool_interp_and_eval(cli_run, capsys):
    out = cli_run['root'] / 'pooled' / 'interp_t1.lpck'
    code = main(['--no-progress', 'pool', 'interp', '--run', str(cli_run['run']), '--t', '1',
                 '--coeffs', '0.3,0.5,0.7', '--out', str(out)])
    assert code == EXIT_OK
    pooled = load_checkpoint(out)
    original = load_checkpoint(cli_run['run'] / 'checkpoint_001.lpck')
    assert pooled.kept == original.kept

    records = [json.loads(line) for line in Path(f"{out}.search.jsonl").read_text().splitlines()]
    assert [r['candidate'] for r in records] == [0, 2]

    code = main(['eval', '--ckpt', str(out), '--data', TEST_DATA])
    assert code == EXIT_OK
    assert 'accuracy=' in capsys.readouterr().out


def test_pool_avg_dense_and_baselines(cli_run):
    root, run_dir = cli_run['root'], str(cli_run['run'])
    assert main(['--no-progress', 'pool', 'avg', '--run', run_dir, '--t', '2',
                 '--out', str(root / 'avg.lpck')]) == EXIT_OK
    assert main(['--no-progress', 'pool', 'dense', '--run', run_dir, '--average',
                 '--out', str(root / 'dense.lpck')]) == EXIT_OK
    dense = load_checkpoint(root / 'dense.lpck')
    assert dense.kept == dense.mask.total

    assert main(['baseline', 'swa', '--run', run_dir, '--t', '1', '--out', str(root / 'swa.lpck')]) == EXIT_OK
    assert main(['baseline', 'ema', '--run', run_dir, '--t', '1', '--decay', '0.9']) == EXIT_OK
    assert (root / 'swa.lpck').exists()


def test_ensemble_and_analysis_tables(cli_run):
    root, run_dir = cli_run['root'], str(cli_run['run'])
    assert main(['ensemble', 'eval', '--run', run_dir, '--t', '1', '--k', '3',
                 '--csv', str(root / 'ensemble.csv')]) == EXIT_OK
    ensemble = pd.read_csv(root / 'ensemble.csv')
    assert ensemble['forward_passes_per_sample'].tolist() == [3, 1]

    assert main(['--no-progress', 'analyze', 'heatmap', '--run', run_dir,
                 '--csv', str(root / 'heatmap.csv')]) == EXIT_OK
    assert len(pd.read_csv(root / 'heatmap.csv')) == 9

    assert main(['analyze', 'path', '--run', run_dir, '--a', '0', '--b', '2',
                 '--csv', str(root / 'path.csv')]) == EXIT_OK
    assert len(pd.read_csv(root / 'path.csv')) == 11

    assert main(['analyze', 'disagreement', '--run', run_dir,
                 '--csv', str(root / 'disagreement.csv')]) == EXIT_OK

    assert main(['--no-progress', 'analyze', 'ablate', '--run', run_dir, '--mode', 'coeff_count',
                 '--arms', '1,3', '--ts', '1', '--csv', str(root / 'ablate.csv')]) == EXIT_OK
    ablation = pd.read_csv(root / 'ablate.csv')
    assert ablation['arm'].tolist() == [1, 3]


def test_multi_seed_compare(cli_run):
    root = cli_run['root']
    seeds_dir = root / 'seeds'
    assert main(['--no-progress', 'imp', 'run', '--config', str(cli_run['config']),
                 '--out', str(seeds_dir), '--seeds', '0,1']) == EXIT_OK
    runs = f"{seeds_dir / 'seed_0'},{seeds_dir / 'seed_1'}"
    assert main(['--no-progress', 'analyze', 'compare', '--run', runs, '--ts', '1',
                 '--csv', str(root / 'compare.csv')]) == EXIT_OK
    table = pd.read_csv(root / 'compare.csv')
    assert len(table) == 5
    assert {'test_acc_mean', 'test_acc_std', 'seeds'} <= set(table.columns)
    assert (table['seeds'] == 2).all()


def test_application_errors_exit_2(cli_run, capsys):
    root = cli_run['root']
    bad = root / 'bad.cfg'
    bad.write_text("learning_rate=0.1\n", encoding='utf-8')
    code = main(['imp', 'run', '--config', str(bad), '--out', str(root / 'never')])
    assert code == EXIT_APPLICATION_ERROR
    err = capsys.readouterr().err
    assert 'Error:' in err and 'Hint:' in err

    code = main(['pool', 'interp', '--run', str(root / 'missing'), '--t', '0', '--out', str(root / 'x.lpck')])
    assert code == EXIT_APPLICATION_ERROR

    code = main(['baseline', 'swa', '--run', str(cli_run['run']), '--t', '7'])
    assert code == EXIT_APPLICATION_ERROR

    corrupt = root / 'corrupt.lpck'
    raw = bytearray((cli_run['run'] / 'checkpoint_000.lpck').read_bytes())
    raw[20] ^= 0xFF
    corrupt.write_bytes(bytes(raw))
    assert main(['eval', '--ckpt', str(corrupt), '--data', TEST_DATA]) == EXIT_APPLICATION_ERROR

    five_classes = "synth:classes=5,dim=8,per_class=4,spread=0.5,seed=0"
    code = main(['eval', '--ckpt', str(cli_run['run'] / 'checkpoint_000.lpck'), '--data', five_classes])
    assert code == EXIT_APPLICATION_ERROR


def test_argument_errors():
    with pytest.raises(SystemExit):
        main(['pool', 'interp', '--run', 'r', '--t', '0', '--coeffs', '0.5,1.5', '--out', 'o'])
    with pytest.raises(SystemExit):
        main(['imp', 'run', '--out', 'r'])


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    assert resolve_threads(4) == 4
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(0) == 1
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)


if __name__ == '__main__':
    pytest.main([__file__, '-v'])
