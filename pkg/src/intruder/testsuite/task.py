import numpy as np
import pytest

from ..constants import *  # NOQA
from ..helpers import InvalidInput
from ..task import TaskSpec, make_task, default_task, proxy_task, known_inputs, linear_probe_accuracy
from . import BaseTestCase


class TaskSpecTestCase(BaseTestCase):

    def test_defaults(self):
        spec = default_task(3)
        self.assert_equal(spec.task_id, 'task-3')
        self.assert_equal(spec.seed, 3)
        self.assert_equal(proxy_task().task_id, 'proxy')

    def test_invalid(self):
        for kw in (dict(n_train=0), dict(n_test=0), dict(classes=1), dict(n_in=0), dict(seed=-1),
                   dict(margin=0.0), dict(noise=-1.0), dict(train_fraction=0.0), dict(train_fraction=1.5),
                   dict(n_train=2.5)):
            with self.assert_raises(InvalidInput):
                TaskSpec('t', **kw)
        with self.assert_raises(InvalidInput):
            TaskSpec('')


class MakeTaskTestCase(BaseTestCase):

    def test_deterministic(self):
        a, b = make_task(default_task(5)), make_task(default_task(5))
        for x, y in zip(a, b):
            if isinstance(x, np.ndarray):
                self.assert_equal(x.tobytes(), y.tobytes())

    def test_seed_matters(self):
        self.assert_not_equal(make_task(default_task(1)).x_train.tobytes(), make_task(default_task(2)).x_train.tobytes())

    def test_shapes(self):
        task = make_task(TaskSpec('t', n_in=8, classes=3, n_train=30, n_test=12))
        self.assert_equal(task.x_train.shape, (8, 30))
        self.assert_equal(task.x_test.shape, (8, 12))
        self.assert_equal(task.y_train.shape, (30, ))
        self.assert_equal(task.means.shape, (8, 3))
        self.assert_true(task.x_train.flags.c_contiguous)

    def test_balanced_labels(self):
        task = make_task(TaskSpec('t', classes=4, n_train=10, n_test=7))
        for labels in (task.y_train, task.y_test):
            counts = np.bincount(labels, minlength=4)
            self.assert_true(counts.max() - counts.min() <= 1)

    def test_disjoint_splits(self):
        task = make_task(TaskSpec('t', n_in=4, n_train=50, n_test=50))
        train = {col.tobytes() for col in task.x_train.T}
        self.assert_equal(len(train & {col.tobytes() for col in task.x_test.T}), 0)

    def test_train_fraction_subsets_the_training_split(self):
        full = make_task(TaskSpec('t', n_train=200))
        part = make_task(TaskSpec('t', n_train=200, train_fraction=0.25))
        self.assert_equal(part.x_train.shape[1], 50)
        columns = {col.tobytes() for col in full.x_train.T}
        self.assert_true(all(col.tobytes() in columns for col in part.x_train.T))
        self.assert_equal(part.x_test.tobytes(), full.x_test.tobytes())

    def test_class_means_have_margin_norm(self):
        task = make_task(TaskSpec('t', margin=3.0))
        self.assert_allclose(np.linalg.norm(task.means, axis=0), np.full(task.spec.classes, 3.0))

    def test_means_live_on_the_support(self):
        task = make_task(default_task(0))
        known = known_inputs(TOY_INPUT_DIM)
        self.assert_equal(task.spec.support, (known, TOY_INPUT_DIM))
        self.assert_true(np.all(task.means[:known] == 0))
        self.assert_true(np.all(np.abs(task.means[known:]) > 0))
        # noise stays isotropic
        self.assert_true(np.all(task.x_train[:known].std(axis=1) > 0))
        proxy = make_task(proxy_task())
        self.assert_equal(proxy.spec.support, (0, known))
        self.assert_true(np.all(proxy.means[known:] == 0))


def test_support_scales_with_input_dim():
    assert default_task(0, n_in=8).support == (4, 8)
    assert proxy_task(n_in=8).support == (0, 4)
    assert default_task(0, n_in=1).support == proxy_task(n_in=1).support == (0, 1)
    assert TaskSpec('t', n_in=8, support=[2, 6]).support == (2, 6)
    for support in ((4, 4), (-1, 3), (0, 9), (1, ), 'ab'):
        with pytest.raises(InvalidInput):
            TaskSpec('t', n_in=8, support=support)


def test_separable_task_is_linearly_probeable():
    task = make_task(TaskSpec('easy', classes=2, margin=4.0, noise=1.0))
    assert linear_probe_accuracy(task) >= 0.99


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_default_tasks_are_learnable_from_raw_inputs(seed):
    assert linear_probe_accuracy(make_task(default_task(seed))) >= 0.95
