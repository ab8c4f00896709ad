import json
import os
import re
import shutil
import subprocess
import sys
import tempfile
from io import StringIO

import numpy as np
import pytest

from ..checkpoint import Checkpoint, load, save
from ..cli import Analyzer, dispatch
from ..constants import *  # NOQA
from ..experiment import make_base
from ..platform import save_text
from . import BaseTestCase, INJECTED_COSINE, regen_golden

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), 'golden')


def exec_cmd(*args, analyzer=None, fork=False, **kw):
    if fork:
        try:
            output = subprocess.check_output((sys.executable, '-m', 'intruder') + args, stderr=subprocess.STDOUT)
            ret = 0
        except subprocess.CalledProcessError as e:
            output = e.output
            ret = e.returncode
        return ret, os.fsdecode(output)
    else:
        stdin, stdout, stderr = sys.stdin, sys.stdout, sys.stderr
        try:
            sys.stdin = StringIO()
            sys.stdout = sys.stderr = output = StringIO()
            if analyzer is None:
                analyzer = Analyzer(prog='intruder')
            analyzer.prerun_checks = lambda *args: None
            ret = dispatch(list(args), analyzer)
            return ret, output.getvalue()
        finally:
            sys.stdin, sys.stdout, sys.stderr = stdin, stdout, stderr


# floats in golden text are compared at 10 significant digits: LAPACK builds differ in the last bits
GOLDEN_FLOAT = re.compile(r'-?\d+\.\d+(?:[eE][-+]?\d+)?')


def golden_text(text):
    return GOLDEN_FLOAT.sub(lambda m: '%.10g' % float(m.group()), text)


def check_golden(name, text):
    """compare *text* against testsuite/golden/<name>; INTRUDER_REGEN_GOLDEN=1 rewrites the file and skips"""
    path = os.path.join(GOLDEN_DIR, name)
    if regen_golden():
        save_text(path, text)
        pytest.skip('wrote golden file %s' % name)
    if not os.path.exists(path):
        pytest.fail('golden file %s is missing' % name)
    with open(path, encoding='utf-8') as fd:
        assert golden_text(fd.read()) == golden_text(text)


class CliTestCaseBase(BaseTestCase):
    FORK_DEFAULT = False

    def setUp(self):
        self.tmpdir = tempfile.mkdtemp()
        self._old_wd = os.getcwd()
        os.chdir(self.tmpdir)

    def tearDown(self):
        os.chdir(self._old_wd)
        shutil.rmtree(self.tmpdir, ignore_errors=True)

    def cmd(self, *args, **kw):
        exit_code = kw.pop('exit_code', EXIT_SUCCESS)
        fork = kw.pop('fork', self.FORK_DEFAULT)
        ret, output = exec_cmd(*args, fork=fork, **kw)
        if ret != exit_code:
            print(output)
        self.assert_equal(ret, exit_code)
        return output

    def create_injected_pair(self, count=2, lam=10):
        # identity bases: the tuned top vector is the uniform vector, |cos| = 1/sqrt(3) to every base vector
        self.cmd('debug-inject', 'base', 'tuned', '--n', '3', '--count', str(count), '--lambda', str(lam), '--identity')

    def read_json(self, path):
        with open(path, encoding='utf-8') as fd:
            return json.load(fd)


class AnalyzeTestCase(CliTestCaseBase):

    def test_identical_pair(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'base', '--k', '3')
        self.assert_in('total=0', output)

    def test_injected_pair(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--out', 'report.json')
        self.assert_in('total=2', output)
        report = self.read_json('report.json')
        self.assert_equal(report['total'], 2)
        self.assert_equal([m['name'] for m in report['matrices']], ['layer.0.weight', 'layer.1.weight'])
        for m in report['matrices']:
            intruder, = m['intruders']
            self.assert_equal(intruder['rank'], 0)
            self.assert_almost_equal(intruder['cosine'], INJECTED_COSINE, delta=1e-12)
            self.assert_almost_equal(intruder['sigma'], 11.0, delta=1e-12)

    def test_injected_pair_golden(self):
        self.create_injected_pair()
        self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--format', 'csv', '--out', 'report.csv')
        with open('report.csv', encoding='utf-8') as fd:
            check_golden('analyze-injected.csv', fd.read())

    def test_report_on_stdout_without_out(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3')
        self.assert_true(output.startswith('total=2\n'))
        report = json.loads(output[output.index('{'):])
        self.assert_equal(report['total'], 2)
        output = self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--format', 'csv')
        self.assert_equal(output.splitlines()[:2], ['total=2', 'name,n_intruders,indices,cosines,sigmas'])

    def test_below_threshold(self):
        self.create_injected_pair()
        self.assert_in('total=0', self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.5', '--k', '3'))

    def test_small_matrices_clamp_k(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--format', 'csv', '--out', 'report.csv')
        self.assert_in('total=2', output)
        self.assert_in('clamped', output)
        with open('report.csv') as fd:
            lines = fd.read().splitlines()
        self.assert_equal(lines[0], 'name,n_intruders,indices,cosines,sigmas')
        self.assert_true(lines[1].startswith('layer.0.weight,1,0,'))

    def test_effective_rank(self):
        self.create_injected_pair(count=1)
        self.cmd('analyze', 'base', 'tuned', '--k', '3', '--effective-rank', '--out', 'report.json')
        m, = self.read_json('report.json')['matrices']
        self.assert_almost_equal(m['update_effective_rank'], 1.0, delta=1e-9)

    def test_missing_file(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'missing', exit_code=EXIT_ERROR)
        self.assert_in('missing' + MANIFEST_SUFFIX, output)

    def test_mismatched_pair(self):
        self.create_injected_pair()
        self.cmd('debug-inject', 'other', 'other-tuned', '--n', '4', '--identity')
        self.assert_in('Mismatch', self.cmd('analyze', 'base', 'other', exit_code=EXIT_ERROR))

    def test_invalid_epsilon(self):
        self.create_injected_pair()
        for eps in ('1.5', '0', '1', 'nan', 'x'):
            self.cmd('analyze', 'base', 'tuned', '--epsilon', eps, exit_code=EXIT_ERROR)

    def test_show_rc(self):
        self.create_injected_pair()
        output = self.cmd('analyze', 'base', 'base', '--k', '3', '--show-rc')
        self.assert_in('terminating with success status, rc 0', output)

    def test_report_round_trip(self):
        self.create_injected_pair()
        self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--out', 'report.json')
        self.cmd('report', 'report.json', '--out', 'report.txt')
        with open('report.txt', encoding='utf-8') as fd:
            check_golden('report-injected.txt', fd.read())
        output = self.cmd('report', 'report.json', '--format', 'csv')
        self.assert_equal(output.splitlines()[0], 'name,n_intruders,indices,cosines,sigmas')

    def test_report_rejects_tampered_total(self):
        self.create_injected_pair()
        self.cmd('analyze', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--out', 'report.json')
        report = self.read_json('report.json')
        report['total'] = 5
        save_text('report.json', json.dumps(report))
        self.assert_in('does not match', self.cmd('report', 'report.json', exit_code=EXIT_ERROR))


class SweepTestCase(CliTestCaseBase):

    def test_identical_pair_is_flat(self):
        self.create_injected_pair()
        output = self.cmd('sweep', 'base', 'base', '--k', '3', '--format', 'csv')
        lines = output.splitlines()
        self.assert_equal(lines[0], 'epsilon,total')
        self.assert_equal(len(lines), 1 + len(EPSILON_GRID))
        self.assert_true(all(line.endswith(',0') for line in lines[1:]))

    def test_step_at_injected_cosine(self):
        self.create_injected_pair()
        output = self.cmd('sweep', 'base', 'tuned', '--k', '3', '--format', 'csv', '--epsilons', '0.5,0.57,0.58,0.7')
        self.assert_equal(output.splitlines()[1:], ['0.5,0', '0.57,0', '0.58,2', '0.7,2'])
        self.cmd('sweep', 'base', 'tuned', '--k', '3', '--format', 'csv', '--epsilons', '0.5,0.57,0.58,0.7', '--out', 'sweep.csv')
        with open('sweep.csv', encoding='utf-8') as fd:
            check_golden('sweep-injected.csv', fd.read())

    def test_k_grid(self):
        self.create_injected_pair()
        self.cmd('sweep', 'base', 'tuned', '--epsilon', '0.6', '--ks', '1,2,3', '--out', 'sweep.json')
        sweep = self.read_json('sweep.json')
        self.assert_equal(sweep['parameter'], 'k')
        self.assert_equal([p['total'] for p in sweep['points']], [2, 2, 2])

    def test_invalid_grids(self):
        self.create_injected_pair()
        self.cmd('sweep', 'base', 'tuned', '--epsilons', '0.5,1.5', exit_code=EXIT_ERROR)
        self.cmd('sweep', 'base', 'tuned', '--epsilons', '0.5,0.4', exit_code=EXIT_ERROR)
        self.cmd('sweep', 'base', 'tuned', '--epsilons', '0.5', '--ks', '1', exit_code=EXIT_ERROR)


class GridTestCase(CliTestCaseBase):

    def test_grid(self):
        self.create_injected_pair(count=1)
        self.cmd('grid', 'base', 'tuned', '--name', 'layer.0.weight', '--k0', '3', '--kt', '1', '--out', 'grid.json')
        grid = np.array(self.read_json('grid.json')['grid'])
        self.assert_equal(grid.shape, (3, 1))
        self.assert_allclose(grid[:, 0], np.full(3, INJECTED_COSINE))


class ScaleTestCase(CliTestCaseBase):

    def test_lambda_one_is_identity(self):
        self.create_injected_pair()
        self.cmd('scale', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--lambda', '1', '-o', 'edited')
        edited, tuned = load('edited'), load('tuned')
        for name in tuned:
            self.assert_equal(edited[name].tobytes(), tuned[name].tobytes())
        with open('edited' + MANIFEST_SUFFIX, encoding='utf-8') as fd:
            check_golden('scale-injected' + MANIFEST_SUFFIX, fd.read())

    def test_lambda_zero_removes_the_intruder(self):
        self.create_injected_pair()
        output = self.cmd('scale', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '-o', 'edited')
        self.assert_in('edited=2', output)
        plan = self.read_json('edited.plan.json')
        self.assert_equal(plan, {'layer.0.weight': {'index': 0, 'lambda': 0.0},
                                 'layer.1.weight': {'index': 0, 'lambda': 0.0}})
        # the removed direction now has sigma 0 and sits last; the two remaining ones are not intruders
        self.assert_in('total=0', self.cmd('analyze', 'base', 'edited', '--epsilon', '0.6', '--k', '2'))
        with open('edited.plan.json', encoding='utf-8') as fd:
            check_golden('scale-injected.plan.json', fd.read())

    def test_lambda_two_doubles_sigma(self):
        self.create_injected_pair()
        self.cmd('scale', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--lambda', '2', '-o', 'edited')
        self.cmd('analyze', 'base', 'edited', '--epsilon', '0.6', '--k', '3', '--out', 'report.json')
        for m in self.read_json('report.json')['matrices']:
            intruder, = m['intruders']
            self.assert_almost_equal(intruder['sigma'], 22.0, delta=1e-9)

    def test_plan_file(self):
        self.create_injected_pair()
        self.cmd('scale', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--lambda', '2', '-o', 'scanned')
        self.cmd('scale', 'base', 'tuned', '--plan', 'scanned.plan.json', '-o', 'planned')
        self.cmd('scale', 'base', 'tuned', '--plan', 'scanned.plan.json', '--lambda', '1', '-o', 'unchanged')
        scanned, planned, unchanged, tuned = load('scanned'), load('planned'), load('unchanged'), load('tuned')
        for name in tuned:
            self.assert_equal(planned[name].tobytes(), scanned[name].tobytes())
            self.assert_equal(unchanged[name].tobytes(), tuned[name].tobytes())

    def test_neighbor_control(self):
        self.create_injected_pair()
        self.cmd('scale', 'base', 'tuned', '--epsilon', '0.6', '--k', '3', '--neighbor', '-o', 'edited')
        plan = self.read_json('edited.plan.json')
        self.assert_equal(sorted(entry['index'] for entry in plan.values()), [1, 1])

    def test_no_intruders(self):
        self.create_injected_pair()
        output = self.cmd('scale', 'base', 'base', '--k', '3', '-o', 'edited', exit_code=EXIT_EMPTY)
        self.assert_in('no intruders at (ε=0.5, k=3)', output)
        self.assert_true(not os.path.exists('edited' + MANIFEST_SUFFIX))

    def test_negative_lambda(self):
        self.create_injected_pair()
        self.cmd('scale', 'base', 'tuned', '--lambda', '-1', '-o', 'edited', exit_code=EXIT_ERROR)


class TrainTestCase(CliTestCaseBase):
    SMALL_TASK = ('--n-train', '64', '--n-test', '64')

    def test_zero_steps_snapshot_is_base(self):
        output = self.cmd('train', '--steps', '0', '-o', 'run', *self.SMALL_TASK)
        self.assert_in('accuracy=', output)
        snapshot, base = load(os.path.join('run', 'snapshot-000000')), make_base()
        self.assert_equal(snapshot.names, list(BODY_NAMES))
        for name in base:
            self.assert_equal(snapshot[name].tobytes(), base[name].tobytes())
        summary = self.read_json(os.path.join('run', 'summary.json'))
        self.assert_equal(summary['per_step_loss'], [])
        self.assert_equal(summary['snapshot_steps'], [0])
        self.assert_equal(summary['snapshot_paths'], ['snapshot-000000'])

    def test_lora_run_directory(self):
        self.cmd('train', '--mode', 'lora', '--rank', '2', '--steps', '20', '--lr', '0.003', '-o', 'run',
                 *self.SMALL_TASK)
        summary = self.read_json(os.path.join('run', 'summary.json'))
        self.assert_equal(summary['snapshot_steps'], list(range(0, 21, 2)))
        self.assert_equal(len(summary['per_step_loss']), 20)
        self.assert_equal(summary['config']['mode'], 'lora')
        for step in summary['snapshot_steps']:
            self.assert_true(os.path.exists(os.path.join('run', 'snapshot-%06d' % step + MANIFEST_SUFFIX)))

    def test_from_saved_base(self):
        self.cmd('debug-make-base', 'small', '--n-in', '8', '--hidden', '6')
        self.cmd('train', '--base', 'small', '--steps', '3', '-o', 'run', *self.SMALL_TASK)
        self.assert_equal(load(os.path.join('run', 'snapshot-000003')).shapes(),
                          {'body.0.weight': (6, 8), 'body.1.weight': (6, 6)})

    def test_zero_body_summary(self):
        # a zero body has no active ReLU: nothing moves, every loss is ln 4 and every head predicts class 0
        save(Checkpoint({'body.0.weight': np.zeros((4, 8)), 'body.1.weight': np.zeros((4, 4))}, {'kind': 'zero'}), 'zero')
        output = self.cmd('train', '--base', 'zero', '--mode', 'lora', '--rank', '1', '--steps', '4', '--lr', '0.003',
                          '--seed', '7', '-o', 'run', *self.SMALL_TASK)
        self.assert_in('accuracy=0.25', output)
        with open(os.path.join('run', 'summary.json'), encoding='utf-8') as fd:
            check_golden('train-zero-body-summary.json', fd.read())

    def test_same_command_same_run(self):
        args = ('--mode', 'lora', '--rank', '1', '--steps', '50', '--lr', '0.003', '--seed', '7') + self.SMALL_TASK
        self.cmd('train', '-o', 'first', *args)
        self.cmd('train', '-o', 'second', *args)
        for name in ('summary.json', 'snapshot-000050' + PAYLOAD_SUFFIX, 'snapshot-000050' + MANIFEST_SUFFIX):
            with open(os.path.join('first', name), 'rb') as a, open(os.path.join('second', name), 'rb') as b:
                self.assert_equal(a.read(), b.read())

    def test_unknown_mode(self):
        output = self.cmd('train', '--mode', 'bogus', '-o', 'run', exit_code=EXIT_ERROR)
        self.assert_in('usage:', output)
        self.assert_in('invalid choice', output)

    def test_divergence(self):
        output = self.cmd('train', '--lr', '1e300', '--steps', '20', '-o', 'run', *self.SMALL_TASK,
                          exit_code=EXIT_DIVERGED)
        self.assert_in('Training diverged at step', output)


class ContinualTestCase(CliTestCaseBase):

    def test_run_directory(self):
        output = self.cmd('continual', '--mode', 'lora', '--rank', '1', '--lr', '0.003', '--steps', '5',
                          '--task-seeds', '1,2', '--n-train', '64', '--n-test', '64', '-o', 'run')
        self.assert_in('intruders=', output)
        with open(os.path.join('run', 'accuracy.csv')) as fd:
            lines = fd.read().splitlines()
        self.assert_equal(lines[0], 'stage,task,task-1,task-2,intruders')
        self.assert_equal(lines[1].split(',')[3], '')
        self.assert_equal(len(lines), 3)
        result = self.read_json(os.path.join('run', 'continual.json'))
        self.assert_equal(result['checkpoint_paths'], ['stage-0', 'stage-1'])
        self.assert_equal(result['stages'][0]['accuracies'][1], None)
        self.assert_equal(load(os.path.join('run', 'stage-1')).metadata['stage'], '1')


class DebugTestCase(CliTestCaseBase):

    def test_make_base(self):
        self.cmd('debug-make-base', 'base')
        base = load('base')
        self.assert_equal(base, make_base())
        self.assert_equal(base.metadata['kind'], 'synthetic-base')

    def test_random_injection_is_seeded(self):
        self.cmd('debug-inject', 'a', 'a-tuned', '--n', '8', '--seed', '3')
        self.cmd('debug-inject', 'b', 'b-tuned', '--n', '8', '--seed', '3')
        self.assert_equal(load('a-tuned'), load('b-tuned'))
        self.assert_equal(load('a-tuned').metadata['lambda'], '10.0')


class UsageTestCase(CliTestCaseBase):

    def test_no_command_shows_help(self):
        self.assert_in('usage:', self.cmd())

    def test_version(self):
        self.assert_in('intruder', self.cmd('--version'))


@pytest.mark.parametrize('args, expected_rc', [
    (('analyze', 'base', 'base', '--k', '3'), EXIT_SUCCESS),
    (('analyze', 'base', 'nowhere'), EXIT_ERROR),
    (('scale', 'base', 'base', '--k', '3', '-o', 'edited'), EXIT_EMPTY),
])
def test_exit_codes_in_subprocess(tmpdir, args, expected_rc):
    with tmpdir.as_cwd():
        assert exec_cmd('debug-inject', 'base', 'tuned', '--n', '3', '--identity')[0] == EXIT_SUCCESS
        ret, output = exec_cmd(*args, fork=True)
    assert ret == expected_rc, output
