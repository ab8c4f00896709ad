"""
spectral diff of base and tuned checkpoints
===========================================

An *intruder dimension* of a tuned matrix is one of its top-k singular
vectors whose absolute cosine similarity to every singular vector of the
base matrix stays below a threshold epsilon. k only restricts the tuned side;
each tuned vector is compared against ALL base singular vectors.

Counting works in two steps: matrix_profile() computes, for every tuned
singular vector, its best |cos| against the base together with its singular
value; counts for any (epsilon, k) are then prefix counts over that profile.
This makes the epsilon and k sweeps cheap and monotone by construction.
"""

from collections import namedtuple

import numpy as np

from .constants import *  # NOQA
from .helpers import InvalidInput, MismatchError, format_float, csv_text, parallel_map
from .linalg import svd, singular_vectors, abs_cosines, as_matrix, effective_rank, spearman
from .logger import create_logger

logger = create_logger()

SIDES = ('left', 'right')


class ScanConfig(namedtuple('ScanConfig', 'epsilon k side')):
    """cosine threshold epsilon in (0, 1), number k of top tuned singular vectors, side left/right"""
    __slots__ = ()

    def __new__(cls, epsilon=DEFAULT_EPSILON, k=DEFAULT_K, side='left'):
        epsilon = float(epsilon)
        if not 0 < epsilon < 1:
            raise InvalidInput('epsilon must be in (0, 1), got %r' % epsilon)
        if isinstance(k, bool) or int(k) != k or k < 1:
            raise InvalidInput('k must be a positive integer, got %r' % (k, ))
        if side not in SIDES:
            raise InvalidInput('side must be one of %s, got %r' % (', '.join(SIDES), side))
        return super().__new__(cls, epsilon, int(k), side)


Intruder = namedtuple('Intruder', 'rank cosine sigma nearest')
Intruder.__doc__ = """tuned rank index, max |cos| to the base, its singular value, base rank attaining the max"""


class MatrixIntruderReport(namedtuple('MatrixIntruderReport', 'name k clamped intruders update_effective_rank')):
    __slots__ = ()

    @property
    def n_intruders(self):
        return len(self.intruders)

    @property
    def ranks(self):
        return [i.rank for i in self.intruders]


class ModelIntruderReport(namedtuple('ModelIntruderReport', 'epsilon k side matrices')):
    """per-matrix reports in lexicographic name order; total is their sum"""
    __slots__ = ()

    @property
    def total(self):
        return sum(m.n_intruders for m in self.matrices)

    def matrix(self, name):
        for m in self.matrices:
            if m.name == name:
                return m
        raise MismatchError('no tensor named %r in report' % (name, ))


SimilarityGrid = namedtuple('SimilarityGrid', 'name grid')
EvolutionTrace = namedtuple('EvolutionTrace', 'name ranks steps cosines sigmas')
EvolutionTrace.__doc__ = """cosines and sigmas are (snapshots x tracked ranks) arrays"""

MatrixProfile = namedtuple('MatrixProfile', 'cosines nearest sigmas')


def _check_shapes(base, tuned):
    base = as_matrix(base, 'base')
    tuned = as_matrix(tuned, 'tuned')
    if base.shape != tuned.shape:
        raise InvalidInput('shape mismatch: base %r vs tuned %r' % (base.shape, tuned.shape))
    return base, tuned


def matrix_profile(base, tuned, side='left'):
    """for every tuned singular vector j: max_i |cos(base_i, tuned_j)|, the i attaining it, sigma_j"""
    base, tuned = _check_shapes(base, tuned)
    tuned_svd = svd(tuned)
    cos = abs_cosines(singular_vectors(tuned_svd, side), singular_vectors(svd(base), side))
    nearest = np.argmax(cos, axis=1)
    return MatrixProfile(cos[np.arange(cos.shape[0]), nearest], nearest, tuned_svd.values)


def _effective_k(k, p, name, clamp):
    if k <= p:
        return k, False
    if not clamp:
        raise InvalidInput('k=%d exceeds min dimension %d of %s' % (k, p, name))
    return p, True


def _report_from_profile(name, profile, epsilon, k, clamp, update_effective_rank=None):
    k, clamped = _effective_k(k, len(profile.sigmas), name, clamp)
    intruders = tuple(Intruder(j, float(profile.cosines[j]), float(profile.sigmas[j]), int(profile.nearest[j]))
                      for j in range(k) if profile.cosines[j] < epsilon)
    return MatrixIntruderReport(name, k, clamped, intruders, update_effective_rank)


def count_intruders(base, tuned, cfg, name='matrix', clamp=False):
    """intruder dimensions among the top cfg.k singular vectors of *tuned*

    k > min(rows, cols) is an error unless *clamp* is set, in which case k is
    reduced to min(rows, cols) and the report says so.
    """
    base, tuned = _check_shapes(base, tuned)
    _effective_k(cfg.k, min(base.shape), name, clamp)
    report = _report_from_profile(name, matrix_profile(base, tuned, cfg.side), cfg.epsilon, cfg.k, clamp)
    logger.debug('%s: %d intruders among top %d (epsilon=%s)', name, report.n_intruders, report.k, cfg.epsilon)
    return report


def model_profiles(pair, side='left', workers=1):
    """name -> MatrixProfile for every tensor of a validated pair, lexicographic order"""
    names = pair.base.names
    profiles = parallel_map(lambda name: matrix_profile(pair.base[name], pair.tuned[name], side), names, workers)
    return dict(zip(names, profiles))


def update_effective_ranks(pair):
    """name -> effective rank of the update tuned - base (0.0 for an all-zero update)"""
    ranks = {}
    for name in pair.base:
        values = svd(pair.tuned[name] - pair.base[name]).values
        ranks[name] = effective_rank(values) if np.any(values > 0) else 0.0
    return ranks


def scan_model(pair, cfg, workers=1, effective_ranks=False):
    """run the intruder count over every matrix of *pair*, clamping k per matrix"""
    profiles = model_profiles(pair, cfg.side, workers)
    eranks = update_effective_ranks(pair) if effective_ranks else {}
    matrices = []
    for name, profile in profiles.items():
        report = _report_from_profile(name, profile, cfg.epsilon, cfg.k, clamp=True,
                                      update_effective_rank=eranks.get(name))
        if report.clamped:
            logger.warning('%s: k=%d exceeds min dimension, clamped to %d', name, cfg.k, report.k)
        logger.debug('%s: %d intruders at ranks %r', name, report.n_intruders, report.ranks)
        matrices.append(report)
    report = ModelIntruderReport(cfg.epsilon, cfg.k, cfg.side, tuple(matrices))
    logger.info('scanned %d matrices: %d intruders (epsilon=%s, k=%d)', len(matrices), report.total, cfg.epsilon, cfg.k)
    return report


def _check_increasing(values, what):
    if not values:
        raise InvalidInput('empty %s grid' % what)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise InvalidInput('%s grid must be strictly increasing: %r' % (what, list(values)))


def epsilon_sweep(pair, epsilons, k=DEFAULT_K, side='left', clamp=False, workers=1):
    """model totals, one per epsilon"""
    _check_increasing(list(epsilons), 'epsilon')
    cfgs = [ScanConfig(epsilon, k, side) for epsilon in epsilons]
    profiles = model_profiles(pair, side, workers)
    return [sum(_report_from_profile(name, profile, cfg.epsilon, cfg.k, clamp).n_intruders
                for name, profile in profiles.items())
            for cfg in cfgs]


def k_sweep(pair, ks, epsilon=DEFAULT_EPSILON, side='left', clamp=False, workers=1):
    """model totals, one per k"""
    _check_increasing(list(ks), 'k')
    cfgs = [ScanConfig(epsilon, k, side) for k in ks]
    profiles = model_profiles(pair, side, workers)
    return [sum(_report_from_profile(name, profile, cfg.epsilon, cfg.k, clamp).n_intruders
                for name, profile in profiles.items())
            for cfg in cfgs]


def similarity_grid(base, tuned, k0=DEFAULT_K, kt=DEFAULT_K, name='matrix', side='left'):
    """|cos| between the top-k0 base (rows) and top-kt tuned (columns) singular vectors"""
    base, tuned = _check_shapes(base, tuned)
    p = min(base.shape)
    for label, k in (('k0', k0), ('kt', kt)):
        if not 1 <= k <= p:
            raise InvalidInput('%s=%d out of range 1..%d for %s' % (label, k, p, name))
    u0 = singular_vectors(svd(base), side)[:, :k0]
    ut = singular_vectors(svd(tuned), side)[:, :kt]
    return SimilarityGrid(name, abs_cosines(u0, ut))


def snapshot_steps(snapshots):
    """step numbers from the snapshots' "step" metadata, or their positions if any is missing"""
    try:
        return [int(s.metadata['step']) for s in snapshots]
    except (KeyError, ValueError):
        return list(range(len(snapshots)))


def evolution_trace(snapshots, name, ranks, base, side='left'):
    """max |cos| to the base and singular value of the tracked tuned ranks at every snapshot"""
    snapshots = list(snapshots)
    if len(snapshots) < 2:
        raise InvalidInput('an evolution trace needs at least 2 snapshots, got %d' % len(snapshots))
    if name not in base:
        raise MismatchError('tensor %s missing from base' % name)
    for i, snapshot in enumerate(snapshots):
        if name not in snapshot:
            raise MismatchError('tensor %s missing from snapshot %d' % (name, i))
    steps = snapshot_steps(snapshots)
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidInput('snapshot steps must be strictly increasing: %r' % steps)
    ranks = list(ranks)
    p = min(base[name].shape)
    if not ranks or any(not 0 <= r < p for r in ranks):
        raise InvalidInput('tracked ranks must be in 0..%d, got %r' % (p - 1, ranks))
    cosines = np.empty((len(snapshots), len(ranks)))
    sigmas = np.empty((len(snapshots), len(ranks)))
    for i, snapshot in enumerate(snapshots):
        profile = matrix_profile(base[name], snapshot[name], side)
        cosines[i] = profile.cosines[ranks]
        sigmas[i] = profile.sigmas[ranks]
    return EvolutionTrace(name, ranks, steps, cosines, sigmas)


def correlate(totals, metric):
    """Spearman rho between per-run intruder totals and a per-run metric"""
    return spearman(totals, metric)


def report_to_json(report):
    return dict(
        epsilon=report.epsilon, k=report.k, side=report.side, total=report.total,
        matrices=[dict(
            name=m.name, k=m.k, clamped=m.clamped, n_intruders=m.n_intruders,
            update_effective_rank=m.update_effective_rank,
            intruders=[dict(rank=i.rank, cosine=i.cosine, sigma=i.sigma, nearest=i.nearest) for i in m.intruders],
        ) for m in report.matrices],
    )


def report_from_json(obj):
    """inverse of report_to_json; the stored total must agree with the matrices"""
    try:
        matrices = tuple(MatrixIntruderReport(
            m['name'], int(m['k']), bool(m['clamped']),
            tuple(Intruder(int(i['rank']), float(i['cosine']), float(i['sigma']), int(i['nearest']))
                  for i in m['intruders']),
            m.get('update_effective_rank'),
        ) for m in obj['matrices'])
        report = ModelIntruderReport(float(obj['epsilon']), int(obj['k']), obj.get('side', 'left'),
                                     tuple(sorted(matrices, key=lambda m: m.name)))
        stored_total = obj.get('total', report.total)
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidInput('not an intruder report: %s' % err) from None
    if stored_total != report.total:
        raise InvalidInput('report total %r does not match its matrices (%d)' % (stored_total, report.total))
    return report


def report_to_csv(report):
    """one row per matrix: name, n_intruders, then ';'-joined ranks, cosines and sigmas"""
    rows = [('name', 'n_intruders', 'indices', 'cosines', 'sigmas')]
    for m in report.matrices:
        rows.append((m.name, m.n_intruders,
                     ';'.join(str(i.rank) for i in m.intruders),
                     ';'.join(format_float(i.cosine) for i in m.intruders),
                     ';'.join(format_float(i.sigma) for i in m.intruders)))
    return csv_text(rows)


def sweep_to_csv(parameter, values, totals):
    rows = [(parameter, 'total')]
    for value, total in zip(values, totals):
        rows.append((format_float(value) if parameter == 'epsilon' else value, total))
    return csv_text(rows)


def sweep_to_json(parameter, values, totals, fixed):
    return dict(parameter=parameter, fixed=fixed,
                points=[{parameter: value, 'total': total} for value, total in zip(values, totals)])


def grid_to_csv(grid):
    """the k0 x kt block, base ranks down, tuned ranks across"""
    k0, kt = grid.grid.shape
    rows = [('base\\tuned', ) + tuple(range(kt))]
    for i in range(k0):
        rows.append((i, ) + tuple(format_float(x) for x in grid.grid[i]))
    return csv_text(rows)


def grid_to_json(grid):
    return dict(name=grid.name, grid=[[float(x) for x in row] for row in grid.grid])


def trace_to_json(trace):
    return dict(name=trace.name, ranks=list(trace.ranks), steps=list(trace.steps),
                cosines=[[float(x) for x in row] for row in trace.cosines],
                sigmas=[[float(x) for x in row] for row in trace.sigmas])
