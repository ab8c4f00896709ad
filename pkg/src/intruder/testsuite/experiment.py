"""
seeded trend checks for the toy experiments

The runs are shared per module; every number they depend on is pinned in
constants.py (seeds, learning rates, alpha, grids).
"""

import csv
import io

import numpy as np
import pytest

from ..constants import *  # NOQA
from ..helpers import InvalidInput, NoIntrudersError
from ..spectral import ScanConfig, evolution_trace
from ..task import TaskSpec, make_task, default_task, proxy_task, known_inputs
from ..trainer import TrainerConfig, ProxyProbe, train, body_layers, retrained_accuracy
from ..experiment import make_base, comparison_configs, method_comparison, lambda_sweep, lambda_sweep_to_csv
from ..experiment import lr_sweep, alpha_rank_study, continual_run, accuracy_matrix_to_csv, continual_to_json
from ..experiment import scan_run, LambdaRow, StageResult, ContinualResult
from ..linalg import svd, singular_vectors
from . import BaseTestCase


class MakeBaseTestCase(BaseTestCase):

    def test_spectrum(self):
        base = make_base()
        self.assert_equal(base.names, list(BODY_NAMES))
        expected = BASE_SPECTRUM_SCALE * BASE_SPECTRUM_DECAY ** np.arange(TOY_HIDDEN_DIM)
        for name in base:
            self.assert_equal(base[name].shape, (TOY_HIDDEN_DIM, TOY_INPUT_DIM))
            self.assert_allclose(svd(base[name]).values, expected, atol=1e-12)

    def test_deterministic(self):
        self.assert_equal(make_base(seed=5), make_base(seed=5))
        self.assert_not_equal(make_base(seed=5)[BODY_NAMES[0]].tobytes(), make_base(seed=6)[BODY_NAMES[0]].tobytes())

    def test_top_directions_read_known_inputs(self):
        base = make_base()
        known = known_inputs(TOY_INPUT_DIM)
        v = singular_vectors(svd(base[BODY_NAMES[0]]), 'right')
        self.assert_allclose(v[known:, :known], 0, atol=1e-12)
        self.assert_allclose(v[:known, known:], 0, atol=1e-12)
        # the second layer is unstructured
        v = singular_vectors(svd(base[BODY_NAMES[1]]), 'right')
        self.assert_true(np.abs(v[known:, :known]).max() > 0.1)

    def test_rectangular(self):
        base = make_base(n_in=8, hidden=5)
        self.assert_equal(base.shapes(), {'body.0.weight': (5, 8), 'body.1.weight': (5, 5)})

    def test_invalid(self):
        for kw in (dict(scale=0.0), dict(decay=1.5), dict(n_in=0), dict(names=('b', 'a'))):
            with self.assert_raises(InvalidInput):
                make_base(**kw)


@pytest.fixture(scope='module')
def base():
    return make_base()


@pytest.fixture(scope='module')
def task():
    return make_task(default_task(0))


@pytest.fixture(scope='module')
def probe(base):
    return ProxyProbe.fit(base, make_task(proxy_task()))


@pytest.fixture(scope='module')
def comparison(base, task, probe):
    configs = comparison_configs(seed=COMPARISON_SEEDS[0], ranks=(1, 4))
    return {row.label: row for row in method_comparison(base, task, configs, probe, workers=3)}


def test_comparison_accuracy(comparison):
    assert comparison['full'].run.accuracy >= 0.9
    assert comparison['lora-r4'].run.accuracy >= 0.9


def test_lora_has_more_intruders_than_full_fine_tuning(comparison):
    totals = {label: row.report.total for label, row in comparison.items()}
    assert totals['lora-r1'] >= totals['lora-r4'] >= totals['full']
    assert totals['lora-r1'] >= 1
    assert totals['full'] == 0


def test_lora_update_has_lower_effective_rank(comparison):
    def mean_erank(label):
        return np.mean([m.update_effective_rank for m in comparison[label].report.matrices])

    assert mean_erank('lora-r1') <= 1 + 1e-6
    assert mean_erank('lora-r4') <= 4 + 1e-6
    assert mean_erank('full') > mean_erank('lora-r1')


def top_intruder(report):
    matrix = max((m for m in report.matrices if m.intruders), key=lambda m: max(i.sigma for i in m.intruders))
    return matrix.name, max(matrix.intruders, key=lambda i: i.sigma).rank


def test_intruder_grows_during_training(base, comparison):
    row = comparison['lora-r1']
    name, rank = top_intruder(row.report)
    snapshots = [snapshot for step, snapshot in row.run.snapshots[1:]]
    trace = evolution_trace(snapshots, name, [rank], base)
    assert trace.sigmas[-1, 0] > trace.sigmas[0, 0]
    assert trace.steps[0] == row.run.config.interval


def test_scaling_the_intruder_trades_forgetting_for_little_accuracy(base, task, probe, comparison):
    run = comparison['lora-r1'].run
    rows = {(r.target, r.lam): r for r in lambda_sweep(run, base, task, probe, lambdas=(0.5, 1.0, 2.0))}
    unedited = rows['intruder', 1.0]
    assert unedited.accuracy == run.accuracy
    assert unedited.forgetting == run.forgetting
    attenuated = rows['intruder', 0.5]
    assert abs(attenuated.forgetting - probe.baseline) < abs(unedited.forgetting - probe.baseline)
    forgetting_change = abs(attenuated.forgetting - unedited.forgetting) / unedited.forgetting
    accuracy_change = abs(attenuated.accuracy - unedited.accuracy) / unedited.accuracy
    assert forgetting_change > accuracy_change
    assert rows['intruder', 2.0].forgetting > unedited.forgetting
    text = lambda_sweep_to_csv(rows.values())
    assert text.startswith('target,lambda,accuracy,forgetting\n')


def test_lambda_sweep_needs_intruders(base, task, probe):
    run = train(base, task, TrainerConfig(steps=0), probe)
    with pytest.raises(NoIntrudersError):
        lambda_sweep(run, base, task, probe)


@pytest.fixture(scope='module')
def continual(base, probe):
    tasks = [make_task(default_task(seed)) for seed in CONTINUAL_TASK_SEEDS]
    return {
        'full': continual_run(base, tasks, TrainerConfig('full', lr=COMPARISON_FULL_LR), probe=probe),
        'lora-r1': continual_run(base, tasks, TrainerConfig('lora', rank=1, alpha=COMPARISON_LORA_ALPHA,
                                                            lr=COMPARISON_LORA_LR), probe=probe),
    }


def test_continual_accuracy_matrix(continual):
    matrix = continual['full'].accuracy_matrix()
    assert len(matrix) == len(CONTINUAL_TASK_SEEDS)
    for stage, row in enumerate(matrix):
        assert all(a is not None for a in row[:stage + 1])
        assert all(a is None for a in row[stage + 1:])
    text = accuracy_matrix_to_csv(continual['full'])
    assert text.splitlines()[0] == 'stage,task,task-1,task-2,task-3,intruders'
    assert text.splitlines()[1].startswith('0,task-1,')
    assert continual_to_json(continual['full'])['tasks'] == ['task-1', 'task-2', 'task-3']


def test_lora_accumulates_intruders(continual):
    totals = continual['lora-r1'].totals
    assert all(b >= a for a, b in zip(totals, totals[1:]))
    assert totals[-1] > continual['full'].totals[-1]


def test_lora_forgets_the_first_task_more(continual):
    assert continual['lora-r1'].accuracy_matrix()[-1][0] < continual['full'].accuracy_matrix()[-1][0]


def test_accuracy_matrix_csv_quotes_task_ids():
    stages = [StageResult(0, 'mix,a', None, [1.0, None], 2, None), StageResult(1, 'b', None, [0.5, 0.75], 3, None)]
    rows = list(csv.reader(io.StringIO(accuracy_matrix_to_csv(ContinualResult(['mix,a', 'b'], stages)))))
    assert rows == [['stage', 'task', 'mix,a', 'b', 'intruders'],
                    ['0', 'mix,a', '1.0', '', '2'],
                    ['1', 'b', '0.5', '0.75', '3']]


def test_lambda_sweep_csv_rows():
    rows = [LambdaRow('intruder', 0.5, 0.75, 1.25), LambdaRow('neighbor', 2.0, 1.0, 0.1)]
    assert lambda_sweep_to_csv(rows) == ('target,lambda,accuracy,forgetting\n'
                                         'intruder,0.5,0.75,1.25\n'
                                         'neighbor,2.0,1.0,0.1\n')


def test_single_task_continual_is_train_and_evaluate(base):
    task = make_task(TaskSpec('solo', n_train=128, n_test=128))
    cfg = TrainerConfig('lora', rank=2, lr=0.003, steps=30)
    result = continual_run(base, [task], cfg)
    run = train(base, task, cfg)
    stage, = result.stages
    for name in base:
        assert stage.checkpoint[name].tobytes() == run.final[name].tobytes()
    assert stage.accuracies == [retrained_accuracy(body_layers(run.final), task)]
    assert stage.total == scan_run(base, run).total
    with pytest.raises(InvalidInput):
        continual_run(base, [], cfg)


def test_intruders_correlate_with_forgetting_over_learning_rates(base, task, probe):
    result = lr_sweep(base, task, probe, workers=4)
    assert len(result.rows) == len(LR_GRID) * len(COMPARISON_SEEDS)
    assert result.rho is not None and result.rho > 0


def test_alpha_rank_study(base, task):
    rows = alpha_rank_study(base, task, TrainerConfig('lora', lr=COMPARISON_LORA_LR, steps=200), ranks=(1, 4))
    assert [(row.rank, row.alpha) for row in rows] == [(1, 2.0), (1, FIXED_ALPHA), (4, 8.0), (4, FIXED_ALPHA)]
    for row in rows:
        assert 0 < row.effective_rank <= row.rank + 1e-6
        assert row.total >= 0


def test_scan_run_uses_final_snapshot(base, task):
    run = train(base, task, TrainerConfig(steps=0))
    assert scan_run(base, run, ScanConfig(0.5, 10)).total == 0
