"""
causal edits of tuned weights
=============================

scale_direction() rescales one singular component of a matrix,
W' = W + (lambda - 1) * sigma_i * u_i v_i^T, so lambda = 0 removes it,
0 < lambda < 1 attenuates it and lambda > 1 amplifies it. A ScalingPlan names
one such edit per tensor and apply_plan() carries it out on a checkpoint.

Also here: rank-one injection W + lambda * v v^T, and LoRA adapters with their
merge W0 + (alpha / r) * B A.
"""

import math
from collections import namedtuple

import numpy as np

from .constants import *  # NOQA
from .helpers import InvalidInput, MismatchError
from .linalg import svd, as_matrix, as_vector, orthonormal_rows
from .logger import create_logger

logger = create_logger()


def _check_lambda(lam):
    lam = float(lam)
    if not math.isfinite(lam) or lam < 0:
        raise InvalidInput('lambda must be finite and >= 0, got %r' % lam)
    return lam


class LoraAdapter(namedtuple('LoraAdapter', 'b a alpha')):
    """low-rank update (alpha / r) * B A with B (m x r), A (r x n)"""
    __slots__ = ()

    def __new__(cls, b, a, alpha):
        b = as_matrix(b, 'B')
        a = as_matrix(a, 'A')
        alpha = float(alpha)
        if b.shape[1] != a.shape[0]:
            raise InvalidInput('inner dimensions disagree: B is %r, A is %r' % (b.shape, a.shape))
        if a.shape[0] > min(b.shape[0], a.shape[1]):
            raise InvalidInput('rank %d exceeds min(%d, %d)' % (a.shape[0], b.shape[0], a.shape[1]))
        if not math.isfinite(alpha) or alpha <= 0:
            raise InvalidInput('alpha must be positive, got %r' % alpha)
        return super().__new__(cls, b, a, alpha)

    @property
    def rank(self):
        return self.a.shape[0]

    @property
    def shape(self):
        return self.b.shape[0], self.a.shape[1]

    @property
    def scaling(self):
        return self.alpha / self.rank

    def update(self):
        """the merged update (alpha / r) * B A"""
        return self.scaling * (self.b @ self.a)

    @classmethod
    def initial(cls, shape, rank, alpha, rng, orthonormal_a=False):
        """B = 0, A ~ N(0, 1/n) entrywise; with orthonormal_a the rows of A are orthonormalized"""
        m, n = shape
        if rank < 1:
            raise InvalidInput('rank must be >= 1, got %r' % rank)
        a = rng.standard_normal((rank, n)) / math.sqrt(n)
        if orthonormal_a:
            a = orthonormal_rows(a)
        return cls(np.zeros((m, rank)), a, alpha)


def merge_adapter(base, adapter):
    """base + (alpha / r) * B A"""
    base = as_matrix(base, 'base')
    if base.shape != adapter.shape:
        raise InvalidInput('adapter shape %r does not fit base %r' % (adapter.shape, base.shape))
    return base + adapter.update()


def scale_direction(tuned, index, lam):
    """tuned + (lambda - 1) * sigma_i u_i v_i^T for the i-th singular triplet of *tuned*"""
    tuned = as_matrix(tuned, 'tuned')
    lam = _check_lambda(lam)
    p = min(tuned.shape)
    if isinstance(index, bool) or int(index) != index or not 0 <= index < p:
        raise InvalidInput('singular index %r out of range 0..%d' % (index, p - 1))
    if lam == 1.0:
        return tuned.copy()
    result = svd(tuned)
    index = int(index)
    component = result.values[index] * np.outer(result.left[:, index], result.right_t[index])
    return tuned + (lam - 1.0) * component


def inject_rank_one(w, v, lam):
    """w + lambda * v v^T for square w and unit v"""
    w = as_matrix(w, 'w')
    v = as_vector(v, 'v')
    lam = float(lam)
    if not math.isfinite(lam):
        raise InvalidInput('lambda must be finite, got %r' % lam)
    if w.shape[0] != w.shape[1]:
        raise InvalidInput('rank-one injection needs a square matrix, got %r' % (w.shape, ))
    if v.shape[0] != w.shape[0]:
        raise InvalidInput('vector has %d entries, matrix is %dx%d' % ((v.shape[0], ) + w.shape))
    if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
        raise InvalidInput('v must have unit norm, got %r' % float(np.linalg.norm(v)))
    if lam == 0.0:
        return w.copy()
    return w + lam * np.outer(v, v)


PlanEntry = namedtuple('PlanEntry', 'index lam')


class ScalingPlan:
    """tensor name -> PlanEntry(index, lambda); tensors without an edit have no entry"""

    def __init__(self, entries=None):
        plan = {}
        for name, entry in dict(entries or {}).items():
            index, lam = entry
            if isinstance(index, bool) or int(index) != index or index < 0:
                raise InvalidInput('plan entry %s: invalid index %r' % (name, index))
            plan[name] = PlanEntry(int(index), _check_lambda(lam))
        self.entries = {name: plan[name] for name in sorted(plan)}

    def __repr__(self):
        return '<%s %r>' % (self.__class__.__name__, self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, name):
        return self.entries[name]

    def items(self):
        return list(self.entries.items())

    def __eq__(self, other):
        if not isinstance(other, ScalingPlan):
            return NotImplemented
        return self.entries == other.entries

    __hash__ = None

    def with_lambda(self, lam):
        """same targets, different lambda"""
        return ScalingPlan({name: (e.index, lam) for name, e in self.entries.items()})


def apply_plan(tuned, plan):
    """new checkpoint with every planned direction rescaled; other tensors are carried over as they are"""
    unknown = [name for name in plan if name not in tuned]
    if unknown:
        raise MismatchError('plan names tensors not in checkpoint: %s' % ', '.join(unknown))
    updates = {}
    for name, entry in plan.items():
        updates[name] = scale_direction(tuned[name], entry.index, entry.lam)
        logger.debug('%s: scaled direction %d by %s', name, entry.index, entry.lam)
    return tuned.replace(updates)


def _top(intruders):
    # largest sigma, ties go to the smallest rank
    return min(intruders, key=lambda i: (-i.sigma, i.rank))


def select_top_intruders(report, lam):
    """per matrix with at least one intruder: the intruder with the largest singular value"""
    return ScalingPlan({m.name: (_top(m.intruders).rank, lam) for m in report.matrices if m.intruders})


def select_neighbors(report, lam):
    """control plan: per matrix with an intruder, a non-intruder rank next to the top intruder

    rank + 1 is preferred, then rank - 1; both must lie within the scanned top-k.
    Matrices without such a neighbour are left out.
    """
    entries = {}
    for m in report.matrices:
        if not m.intruders:
            continue
        rank = _top(m.intruders).rank
        flagged = set(m.ranks)
        for candidate in (rank + 1, rank - 1):
            if 0 <= candidate < m.k and candidate not in flagged:
                entries[m.name] = (candidate, lam)
                break
    return ScalingPlan(entries)


def plan_to_json(plan):
    return {name: {'index': entry.index, 'lambda': entry.lam} for name, entry in plan.items()}


def plan_from_json(obj):
    if not isinstance(obj, dict):
        raise InvalidInput('a scaling plan is a JSON object mapping tensor names to {index, lambda}')
    try:
        return ScalingPlan({name: (e['index'], e['lambda']) for name, e in obj.items()})
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidInput('malformed scaling plan entry: %s' % err) from None
