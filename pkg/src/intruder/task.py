"""
synthetic classification tasks
==============================

Every task is a seeded Gaussian mixture: each class c has a mean
margin * m_c with m_c a random unit vector supported on the task's input
coordinates [lo, hi), and samples are the class mean plus isotropic noise of
total norm ~noise (per-coordinate std noise/sqrt(n_in)) on all coordinates.
Samples are stored as the *columns* of x (n_in x N), matching Y = W X.

The leading known_inputs(n_in) coordinates are the ones the synthetic base
reads with its top singular directions. Fine-tuning tasks default to the
remaining coordinates, the forgetting proxy lives on the known ones, so
adapting the body to a task pulls it away from the proxy's features.
"""

from collections import namedtuple

import numpy as np

from .constants import *  # NOQA
from .helpers import InvalidInput
from .linalg import make_rng


def known_inputs(n_in):
    """number of leading input coordinates carrying the base's top singular directions"""
    return int(n_in * KNOWN_INPUT_FRACTION)


def fresh_support(n_in):
    return (known_inputs(n_in), n_in)


def known_support(n_in):
    known = known_inputs(n_in)
    return (0, known) if known else (0, n_in)


class TaskSpec(namedtuple('TaskSpec', 'task_id n_in classes n_train n_test seed margin noise train_fraction support')):
    __slots__ = ()

    def __new__(cls, task_id, n_in=TOY_INPUT_DIM, classes=TASK_CLASSES, n_train=TASK_TRAIN_SIZE,
                n_test=TASK_TEST_SIZE, seed=0, margin=TASK_MARGIN, noise=TASK_NOISE, train_fraction=1.0,
                support=None):
        if not isinstance(task_id, str) or not task_id:
            raise InvalidInput('task id must be a nonempty string, got %r' % (task_id, ))
        for label, value, minimum in (('n_in', n_in, 1), ('classes', classes, 2),
                                      ('n_train', n_train, 1), ('n_test', n_test, 1), ('seed', seed, 0)):
            if isinstance(value, bool) or int(value) != value or value < minimum:
                raise InvalidInput('%s must be an integer >= %d, got %r' % (label, minimum, value))
        if not margin > 0 or not noise >= 0:
            raise InvalidInput('margin must be > 0 and noise >= 0, got %r and %r' % (margin, noise))
        if not 0 < train_fraction <= 1:
            raise InvalidInput('train_fraction must be in (0, 1], got %r' % (train_fraction, ))
        if support is None:
            support = fresh_support(int(n_in))
        try:
            lo, hi = (int(bound) for bound in support)
        except (TypeError, ValueError):
            raise InvalidInput('support must be a (lo, hi) pair, got %r' % (support, )) from None
        if not 0 <= lo < hi <= n_in:
            raise InvalidInput('support must satisfy 0 <= lo < hi <= n_in=%d, got %r' % (n_in, support))
        return super().__new__(cls, task_id, int(n_in), int(classes), int(n_train), int(n_test), int(seed),
                               float(margin), float(noise), float(train_fraction), (lo, hi))


SyntheticTask = namedtuple('SyntheticTask', 'spec means x_train y_train x_test y_test')


def make_task(spec):
    """deterministic dataset for *spec*; train and test are disjoint draws of one sample pool"""
    rng = make_rng(spec.seed)
    lo, hi = spec.support
    means = rng.standard_normal((spec.n_in, spec.classes))
    means[:lo] = 0
    means[hi:] = 0
    means *= spec.margin / np.linalg.norm(means, axis=0)
    total = spec.n_train + spec.n_test
    # balanced labels over the pool, then a seeded shuffle; each split stays balanced within +-1
    train_labels = np.arange(spec.n_train) % spec.classes
    test_labels = np.arange(spec.n_test) % spec.classes
    labels = np.concatenate([train_labels, test_labels])
    x = means[:, labels] + rng.standard_normal((spec.n_in, total)) * (spec.noise / np.sqrt(spec.n_in))
    train = rng.permutation(spec.n_train)
    test = spec.n_train + rng.permutation(spec.n_test)
    if spec.train_fraction < 1:
        keep = max(spec.classes, int(round(spec.train_fraction * spec.n_train)))
        train = np.sort(rng.permutation(train)[:keep])
    return SyntheticTask(spec, means, np.ascontiguousarray(x[:, train]), labels[train],
                         np.ascontiguousarray(x[:, test]), labels[test])


def default_task(seed=0, **kw):
    return TaskSpec('task-%d' % seed, seed=seed, **kw)


def proxy_task(seed=PROXY_SEED, n_in=TOY_INPUT_DIM, **kw):
    """the held-out "pre-training proxy" used to measure forgetting, on the base's known inputs"""
    kw.setdefault('support', known_support(n_in))
    return TaskSpec(PROXY_TASK_ID, n_in=n_in, seed=seed, **kw)


def linear_probe_accuracy(task):
    """test accuracy of a closed-form least-squares probe (with bias) on the raw inputs"""
    def design(x):
        return np.vstack([x, np.ones((1, x.shape[1]))]).T

    targets = np.eye(task.spec.classes)[task.y_train]
    weights, *_ = np.linalg.lstsq(design(task.x_train), targets, rcond=None)
    predicted = np.argmax(design(task.x_test) @ weights, axis=1)
    return float(np.mean(predicted == task.y_test))
