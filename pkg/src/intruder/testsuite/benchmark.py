"""
Do benchmarks using pytest-benchmark.

Usage:

    py.test --benchmark-only
"""

import numpy as np
import pytest

from ..checkpoint import Checkpoint, validate_pair, save, load
from ..experiment import make_base
from ..linalg import make_rng, svd
from ..spectral import ScanConfig, scan_model, epsilon_sweep
from ..task import make_task, default_task
from ..trainer import TrainerConfig, train


@pytest.fixture(scope='session', params=[64, 256])
def pair(request):
    n = request.param
    rng = make_rng(0)
    base = {'layer.%d.weight' % i: rng.standard_normal((n, n)) for i in range(4)}
    tuned = {name: w + 0.1 * np.outer(rng.standard_normal(n), rng.standard_normal(n)) for name, w in base.items()}
    return validate_pair(Checkpoint(base), Checkpoint(tuned))


def test_svd(benchmark, pair):
    m = pair.tuned['layer.0.weight']
    benchmark(svd, m)


@pytest.mark.parametrize('workers', [1, 4])
def test_scan_model(benchmark, pair, workers):
    report = benchmark(scan_model, pair, ScanConfig(), workers)
    assert len(report.matrices) == 4


def test_epsilon_sweep(benchmark, pair):
    benchmark(epsilon_sweep, pair, [0.1, 0.3, 0.5, 0.7, 0.9])


def test_save_load(benchmark, pair, tmpdir):
    path = str(tmpdir.join('tuned'))

    def round_trip():
        save(pair.tuned, path)
        return load(path)

    assert benchmark(round_trip) == pair.tuned


@pytest.mark.parametrize('mode', ['full', 'lora'])
def test_train(benchmark, mode):
    base, task = make_base(), make_task(default_task(0))
    cfg = TrainerConfig(mode, rank=4, lr=0.003, steps=100)
    run = benchmark.pedantic(train, args=(base, task, cfg), rounds=3)
    assert run.snapshot_steps[-1] == 100
