"""
dense linear algebra and statistics
===================================

All matrices are plain 2-D numpy float64 arrays ("Matrix"); this module
validates them, decomposes them and compares singular vectors.

Singular vectors are only defined up to sign. svd() fixes the sign so that
the first nonzero entry of every left singular vector is non-negative (the
paired right vector is flipped along), and every comparison uses the
*absolute* cosine, so nothing downstream depends on the convention.
"""

from collections import namedtuple

import numpy as np
from scipy.stats import entropy, rankdata

from .constants import *  # NOQA
from .helpers import InvalidInput, UndefinedCorrelation

SvdResult = namedtuple('SvdResult', 'left values right_t')
SvdResult.__doc__ = """thin SVD: left (m x p, columns u_i), values (p, descending), right_t (p x n, rows v_i^T); p = min(m, n)"""


def as_matrix(x, name='matrix'):
    """return *x* as a finite, C-contiguous float64 2-D array, raise InvalidInput otherwise"""
    try:
        m = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise InvalidInput('%s is not numeric: %s' % (name, err)) from None
    if m.ndim != 2:
        raise InvalidInput('%s must be 2-D, got shape %r' % (name, m.shape))
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidInput('%s must have at least one row and one column, got shape %r' % (name, m.shape))
    if not np.all(np.isfinite(m)):
        raise InvalidInput('%s has non-finite entries' % name)
    return np.ascontiguousarray(m)


def as_vector(x, name='vector'):
    try:
        v = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise InvalidInput('%s is not numeric: %s' % (name, err)) from None
    if v.ndim != 1 or v.shape[0] < 1:
        raise InvalidInput('%s must be a non-empty 1-D vector, got shape %r' % (name, v.shape))
    if not np.all(np.isfinite(v)):
        raise InvalidInput('%s has non-finite entries' % name)
    return v


def svd(m):
    """thin SVD of *m* with the deterministic sign convention, see module docstring"""
    m = as_matrix(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    # index of the first nonzero entry in every column of u
    first = np.argmax(u != 0, axis=0)
    signs = np.where(u[first, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u = u * signs
    vt = vt * signs[:, np.newaxis]
    return SvdResult(np.ascontiguousarray(u), s, np.ascontiguousarray(vt))


def singular_vectors(result, side='left'):
    """singular vectors of *result* as the columns of a matrix (left: U, right: V)"""
    if side == 'left':
        return result.left
    if side == 'right':
        return result.right_t.T
    raise InvalidInput('side must be "left" or "right", got %r' % side)


def reconstruction_error(m, result):
    """relative Frobenius error of left . diag(values) . right_t against *m*"""
    approx = (result.left * result.values) @ result.right_t
    norm = np.linalg.norm(m)
    diff = np.linalg.norm(approx - m)
    return diff / norm if norm > 0 else diff


def orthonormality_defect(m, axis=0):
    """max |Q^T Q - I| over the columns (axis=0) or rows (axis=1) of *m*"""
    m = np.asarray(m, dtype=np.float64)
    gram = m.T @ m if axis == 0 else m @ m.T
    return float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0


def _unit_columns(basis):
    norms = np.linalg.norm(basis, axis=0)
    if np.any(norms == 0):
        raise InvalidInput('basis has a zero column')
    return basis / norms


def abs_cosines(a, b):
    """|cos| between every column of *a* (rows of the result) and every column of *b*"""
    a = _unit_columns(np.asarray(a, dtype=np.float64))
    b = _unit_columns(np.asarray(b, dtype=np.float64))
    if a.shape[0] != b.shape[0]:
        raise InvalidInput('dimension mismatch: %d vs %d' % (a.shape[0], b.shape[0]))
    return np.clip(np.abs(a.T @ b), 0.0, 1.0)


def max_abs_cosine(v, basis):
    """(max_i |cos(v, basis_i)|, smallest i attaining it)"""
    v = as_vector(v, 'v')
    basis = as_matrix(basis, 'basis')
    if not np.any(v):
        raise InvalidInput('zero vector has no direction')
    if basis.shape[0] != v.shape[0]:
        raise InvalidInput('dimension mismatch: vector has %d entries, basis columns have %d' % (v.shape[0], basis.shape[0]))
    cosines = abs_cosines(v[:, np.newaxis], basis)[0]
    index = int(np.argmax(cosines))
    return float(cosines[index]), index


def effective_rank(values):
    """exp of the Shannon entropy of the trace-normalized singular values"""
    values = as_vector(values, 'values')
    if np.any(values < 0):
        raise InvalidInput('singular values must be non-negative')
    if not np.any(values > 0):
        raise InvalidInput('effective rank needs at least one positive value')
    # entropy() normalizes to a distribution and lets p=0 terms contribute 0
    return float(np.exp(entropy(values)))


def spearman(xs, ys):
    """Spearman's rho: Pearson correlation of the (average, for ties) rank vectors

    No p-value is computed.
    """
    xs = as_vector(xs, 'xs')
    ys = as_vector(ys, 'ys')
    if xs.shape != ys.shape:
        raise InvalidInput('length mismatch: %d vs %d' % (xs.shape[0], ys.shape[0]))
    if xs.shape[0] < 3:
        raise InvalidInput('spearman needs at least 3 pairs, got %d' % xs.shape[0])
    rx = rankdata(xs, method='average')
    ry = rankdata(ys, method='average')
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise UndefinedCorrelation('a ranked input is constant')
    rho = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(rho, -1.0, 1.0))


def make_rng(seed):
    """seeded numpy Generator; the bit generator is RNG_ALGORITHM (PCG64)"""
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise InvalidInput('seed must be an unsigned 64-bit integer, got %d' % seed)
    return np.random.Generator(np.random.PCG64(seed))


def random_orthogonal(n, rng):
    """n x n orthogonal matrix from the QR decomposition of a Gaussian matrix (signs fixed by diag(R))"""
    if n < 1:
        raise InvalidInput('n must be positive, got %d' % n)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return np.ascontiguousarray(q * d)


def orthonormal_rows(m):
    """orthonormalize the rows of a wide matrix (Gram-Schmidt via QR of the transpose)"""
    m = as_matrix(m)
    if m.shape[0] > m.shape[1]:
        raise InvalidInput('cannot orthonormalize %d rows of length %d' % m.shape)
    q, r = np.linalg.qr(m.T)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return np.ascontiguousarray((q * d).T)
