"""
toy trainer
===========

The toy model is a chain of bias-free ReLU layers (the "body", one checkpoint
tensor per layer, applied in name order) followed by a linear softmax head.
Samples are columns: Y = W X.

Three modes:

- full: every body matrix and the head get plain gradient-descent updates.
- lora: each body matrix W0 is frozen and carries an adapter (alpha / r) * B A,
  B and A are trained (simultaneous update from the same gradient).
- lora-freeze-a: as lora, A is orthonormal at init and never updated.

The head is trained in every mode. Snapshots are full checkpoints of the
(merged) body, taken every snapshot_interval steps and at the end.
"""

import math
from collections import namedtuple

import numpy as np
from scipy.special import log_softmax, softmax

from .checkpoint import Checkpoint
from .constants import *  # NOQA
from .helpers import InvalidInput, MismatchError, DivergenceError, ProgressIndicatorPercent, StableDict
from .intervention import LoraAdapter
from .linalg import make_rng
from .logger import create_logger

logger = create_logger()

Batch = namedtuple('Batch', 'x y')


def body_layers(checkpoint):
    """the body matrices in layer (name) order; each layer must consume the previous one's output"""
    layers = [m for name, m in checkpoint.items()]
    if not layers:
        raise InvalidInput('a toy body needs at least one layer')
    for prev, (name, m) in zip(layers, checkpoint.items()[1:]):
        if m.shape[1] != prev.shape[0]:
            raise MismatchError('layer %s expects %d inputs, previous layer gives %d' % (name, m.shape[1], prev.shape[0]))
    return layers


def features(body, x):
    a = x
    for w in body:
        a = np.maximum(w @ a, 0.0)
    return a


def cross_entropy(body, head, x, y):
    logp = log_softmax(head @ features(body, x), axis=0)
    return float(-np.mean(logp[y, np.arange(len(y))]))


def accuracy(body, head, x, y):
    return float(np.mean(np.argmax(head @ features(body, x), axis=0) == y))


def gradients(body, head, x, y):
    """mean cross-entropy and its gradients: (loss, [dL/dW per layer], dL/dhead)"""
    acts, pres = [x], []
    for w in body:
        pres.append(w @ acts[-1])
        acts.append(np.maximum(pres[-1], 0.0))
    logits = head @ acts[-1]
    logp = log_softmax(logits, axis=0)
    columns = np.arange(len(y))
    loss = float(-np.mean(logp[y, columns]))
    dz = np.exp(logp)
    dz[y, columns] -= 1.0
    dz /= len(y)
    head_grad = dz @ acts[-1].T
    d = head.T @ dz
    grads = [None] * len(body)
    for layer in reversed(range(len(body))):
        d = d * (pres[layer] > 0)
        grads[layer] = d @ acts[layer].T
        d = body[layer].T @ d
    return loss, grads, head_grad


def lora_gradients(base_body, adapters, head, x, y):
    """(loss, [dL/dB], [dL/dA], dL/dhead) for body W0 + (alpha / r) B A"""
    merged = [w + ad.update() for w, ad in zip(base_body, adapters)]
    loss, grads, head_grad = gradients(merged, head, x, y)
    b_grads = [ad.scaling * (g @ ad.a.T) for g, ad in zip(grads, adapters)]
    a_grads = [ad.scaling * (ad.b.T @ g) for g, ad in zip(grads, adapters)]
    return loss, b_grads, a_grads, head_grad


def _check_finite(step, loss, *arrays):
    if not math.isfinite(loss) or not all(np.isfinite(a).all() for a in arrays):
        raise DivergenceError(step, loss)


def full_step(body, head, batch, lr, step=1):
    """one gradient-descent step on every body matrix and the head: (loss before the step, body, head)"""
    with np.errstate(over='ignore', invalid='ignore'):
        loss, grads, head_grad = gradients(body, head, batch.x, batch.y)
        body = [w - lr * g for w, g in zip(body, grads)]
        head = head - lr * head_grad
    _check_finite(step, loss, head, *body)
    return loss, body, head


def lora_step(base_body, adapters, head, batch, lr, freeze_a=False, step=1):
    """one step on the adapters (B and A updated simultaneously, A kept when frozen) and the head"""
    with np.errstate(over='ignore', invalid='ignore'):
        loss, b_grads, a_grads, head_grad = lora_gradients(base_body, adapters, head, batch.x, batch.y)
        bs = [ad.b - lr * g for ad, g in zip(adapters, b_grads)]
        as_ = [ad.a if freeze_a else ad.a - lr * g for ad, g in zip(adapters, a_grads)]
        head = head - lr * head_grad
    _check_finite(step, loss, head, *bs, *as_)
    return loss, [LoraAdapter(b, a, ad.alpha) for b, a, ad in zip(bs, as_, adapters)], head


def fit_head(body, task, steps=HEAD_FIT_STEPS):
    """softmax regression on frozen features of the training split, full batch, from a zero head

    The step size 1 / mean(|f|^2) keeps gradient descent stable for the
    softmax cross-entropy (its Hessian is bounded by half the feature second moment).
    """
    _check_input_dim(body, task)
    f = features(body, task.x_train)
    y = task.y_train
    classes = task.spec.classes
    head = np.zeros((classes, f.shape[0]))
    scale = float(np.mean(np.sum(f * f, axis=0)))
    if scale == 0.0:
        logger.warning('all features are zero, head stays at zero')
        return head
    lr = 1.0 / scale
    onehot = np.eye(classes)[:, y]
    for _ in range(steps):
        head -= lr * ((softmax(head @ f, axis=0) - onehot) @ f.T / len(y))
    return head


def evaluate(body, head, task):
    """(accuracy, cross-entropy) on the test split"""
    return accuracy(body, head, task.x_test, task.y_test), cross_entropy(body, head, task.x_test, task.y_test)


def retrained_accuracy(body, task):
    """test accuracy after fitting a fresh head on the (frozen) body"""
    return evaluate(body, fit_head(body, task), task)[0]


def sample_batch(task, batch_size, rng):
    index = rng.choice(task.x_train.shape[1], size=min(batch_size, task.x_train.shape[1]), replace=False)
    return Batch(task.x_train[:, index], task.y_train[index])


class TrainerConfig(namedtuple('TrainerConfig', 'mode rank alpha lr steps batch_size snapshot_interval seed')):
    __slots__ = ()

    def __new__(cls, mode=DEFAULT_MODE, rank=DEFAULT_RANK, alpha=FIXED_ALPHA, lr=DEFAULT_LR, steps=DEFAULT_STEPS,
                batch_size=DEFAULT_BATCH_SIZE, snapshot_interval=None, seed=0):
        if mode not in TRAINER_MODES:
            raise InvalidInput('mode must be one of %s, got %r' % (', '.join(TRAINER_MODES), mode))
        for label, value, minimum in (('rank', rank, 1), ('steps', steps, 0), ('batch_size', batch_size, 1),
                                      ('seed', seed, 0)):
            if isinstance(value, bool) or int(value) != value or value < minimum:
                raise InvalidInput('%s must be an integer >= %d, got %r' % (label, minimum, value))
        if snapshot_interval is not None and (int(snapshot_interval) != snapshot_interval or snapshot_interval < 1):
            raise InvalidInput('snapshot_interval must be a positive integer, got %r' % (snapshot_interval, ))
        alpha, lr = float(alpha), float(lr)
        if not (math.isfinite(alpha) and alpha > 0 and math.isfinite(lr) and lr > 0):
            raise InvalidInput('alpha and lr must be positive, got %r and %r' % (alpha, lr))
        return super().__new__(cls, mode, int(rank), alpha, lr, int(steps), int(batch_size),
                               None if snapshot_interval is None else int(snapshot_interval), int(seed))

    @classmethod
    def from_args(cls, args):
        """build from an argparse namespace carrying the trainer flags"""
        return cls(mode=args.mode, rank=args.rank, alpha=args.alpha, lr=args.lr, steps=args.steps,
                   batch_size=args.batch_size, snapshot_interval=args.snapshot_interval, seed=args.seed)

    @property
    def lora(self):
        return self.mode != 'full'

    @property
    def freeze_a(self):
        return self.mode == 'lora-freeze-a'

    @property
    def interval(self):
        if self.snapshot_interval is not None:
            return self.snapshot_interval
        return max(1, int(round(self.steps * SNAPSHOT_FRACTION)))


class ProxyProbe(namedtuple('ProxyProbe', 'task head baseline')):
    """a head fitted once on the base body for the proxy task, and the base proxy loss"""
    __slots__ = ()

    @classmethod
    def fit(cls, base, task):
        body = body_layers(base)
        head = fit_head(body, task)
        return cls(task, head, cross_entropy(body, head, task.x_test, task.y_test))


def _check_input_dim(body, task):
    if body[0].shape[1] != task.x_train.shape[0]:
        raise MismatchError('task %s has %d inputs, body expects %d' % (
            task.spec.task_id, task.x_train.shape[0], body[0].shape[1]))


def measure_forgetting(snapshot, probe):
    """proxy-task test cross-entropy of *snapshot*'s body under the frozen proxy head"""
    body = body_layers(snapshot)
    _check_input_dim(body, probe.task)
    if body[-1].shape[0] != probe.head.shape[1]:
        raise MismatchError('snapshot body has %d features, proxy head expects %d' % (
            body[-1].shape[0], probe.head.shape[1]))
    return cross_entropy(body, probe.head, probe.task.x_test, probe.task.y_test)


class ToyRun:
    """the outcome of train(): snapshots, per-step losses, final head and scores"""

    def __init__(self, config, task_id, snapshots, losses, head, adapters, base_accuracy, accuracy,
                 forgetting=None, baseline_forgetting=None):
        self.config = config
        self.task_id = task_id
        self.snapshots = snapshots  # list of (step, Checkpoint)
        self.losses = losses
        self.head = head
        self.adapters = adapters  # name -> LoraAdapter, None for full fine-tuning
        self.base_accuracy = base_accuracy
        self.accuracy = accuracy
        self.forgetting = forgetting
        self.baseline_forgetting = baseline_forgetting

    def __repr__(self):
        return '<%s %s %s steps=%d>' % (self.__class__.__name__, self.config.mode, self.task_id, self.config.steps)

    @property
    def final(self):
        return self.snapshots[-1][1]

    @property
    def snapshot_steps(self):
        return [step for step, _ in self.snapshots]

    def to_summary(self, snapshot_paths=()):
        return StableDict(
            config=dict(self.config._asdict(), snapshot_interval=self.config.interval),
            rng=RNG_ALGORITHM,
            task=self.task_id,
            base_accuracy=self.base_accuracy,
            final_accuracy=self.accuracy,
            forgetting=self.forgetting,
            baseline_forgetting=self.baseline_forgetting,
            per_step_loss=[float(x) for x in self.losses],
            snapshot_steps=self.snapshot_steps,
            snapshot_paths=[str(p) for p in snapshot_paths],
        )


def train(base, task, cfg, probe=None, progress=False):
    """fine-tune the body in *base* on *task*; returns a ToyRun

    The head starts from a fit on the frozen base features. With cfg.steps == 0
    the only snapshot is the base itself. A non-finite loss raises DivergenceError.
    """
    names = base.names
    body0 = body_layers(base)
    _check_input_dim(body0, task)
    head = fit_head(body0, task)
    base_accuracy = accuracy(body0, head, task.x_test, task.y_test)
    rng = make_rng(cfg.seed)
    adapters = None
    if cfg.lora:
        adapters = [LoraAdapter.initial(w.shape, cfg.rank, cfg.alpha, rng, orthonormal_a=cfg.freeze_a) for w in body0]

    def snapshot(step, body):
        metadata = {'step': str(step), 'mode': cfg.mode, 'task': task.spec.task_id}
        return step, base.replace(dict(zip(names, body)), metadata)

    body = body0
    snapshots = [snapshot(0, body0)]
    losses = np.empty(cfg.steps)
    interval = cfg.interval
    pi = ProgressIndicatorPercent(total=cfg.steps, step=10, msg='training %3.0f%%') if progress else None
    for step in range(1, cfg.steps + 1):
        batch = sample_batch(task, cfg.batch_size, rng)
        if cfg.lora:
            losses[step - 1], adapters, head = lora_step(body0, adapters, head, batch, cfg.lr, cfg.freeze_a, step)
            body = [w + ad.update() for w, ad in zip(body0, adapters)]
        else:
            losses[step - 1], body, head = full_step(body, head, batch, cfg.lr, step)
        if step % interval == 0 or step == cfg.steps:
            snapshots.append(snapshot(step, body))
            logger.debug('step %d: loss %.6f', step, losses[step - 1])
        if pi:
            pi.show(step - 1)
    if pi:
        pi.finish()

    final_accuracy = accuracy(body, head, task.x_test, task.y_test)
    forgetting = baseline = None
    if probe is not None:
        forgetting = measure_forgetting(snapshots[-1][1], probe)
        baseline = probe.baseline
    logger.info('%s on %s: accuracy %.4f (base %.4f) after %d steps', cfg.mode, task.spec.task_id,
                final_accuracy, base_accuracy, cfg.steps)
    return ToyRun(cfg, task.spec.task_id, snapshots, losses, head,
                  dict(zip(names, adapters)) if adapters is not None else None,
                  base_accuracy, final_accuracy, forgetting, baseline)
