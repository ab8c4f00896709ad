import math

import numpy as np

from ..constants import *  # NOQA
from ..helpers import InvalidInput, UndefinedCorrelation
from ..linalg import svd, reconstruction_error, orthonormality_defect, max_abs_cosine
from ..linalg import effective_rank, spearman, make_rng, random_orthogonal, orthonormal_rows
from . import BaseTestCase, seeded_matrix

# Note: these tests are part of the self test, do not use or import py.test functionality here.


class SvdTestCase(BaseTestCase):

    def test_identity(self):
        result = svd(np.eye(3))
        self.assert_allclose(result.values, [1, 1, 1])
        self.assert_true(orthonormality_defect(result.left) <= ORTHONORMALITY_TOL)
        # repeated singular values: only the subspace is fixed, U V^T must still be I
        self.assert_allclose(result.left @ result.right_t, np.eye(3))

    def test_diagonal(self):
        result = svd(np.diag([3.0, 2.0, 1.0]))
        self.assert_allclose(result.values, [3, 2, 1])
        self.assert_allclose(np.abs(result.left), np.eye(3))

    def test_reconstruction(self):
        m = seeded_matrix(0, 5, 4)
        result = svd(m)
        self.assert_equal(result.left.shape, (5, 4))
        self.assert_equal(result.values.shape, (4, ))
        self.assert_equal(result.right_t.shape, (4, 4))
        self.assert_true(reconstruction_error(m, result) <= RECONSTRUCTION_TOL)

    def test_sign_convention(self):
        for seed in range(10):
            left = svd(seeded_matrix(seed, 6, 3)).left
            for j in range(left.shape[1]):
                first = left[np.flatnonzero(left[:, j])[0], j]
                self.assert_true(first >= 0)

    def test_non_finite(self):
        for bad in (np.nan, np.inf, -np.inf):
            m = np.eye(3)
            m[1, 2] = bad
            with self.assert_raises(InvalidInput):
                svd(m)

    def test_not_2d(self):
        with self.assert_raises(InvalidInput):
            svd(np.ones(3))

    def test_deterministic(self):
        m = seeded_matrix(3, 7, 5)
        a, b = svd(m), svd(m)
        for x, y in zip(a, b):
            self.assert_equal(x.tobytes(), y.tobytes())


class MaxAbsCosineTestCase(BaseTestCase):

    def test_basis_member(self):
        e1 = np.zeros(4)
        e1[0] = 1
        self.assert_equal(max_abs_cosine(e1, np.eye(4)), (1.0, 0))

    def test_two_of_three(self):
        value, index = max_abs_cosine(np.array([1.0, 1.0, 0.0]) / np.sqrt(2), np.eye(3))
        self.assert_almost_equal(value, 1 / np.sqrt(2), delta=1e-15)
        self.assert_equal(index, 0)

    def test_uniform_vector_bound(self):
        for n in (2, 3, 16, 64, 512):
            value, index = max_abs_cosine(np.ones(n) / np.sqrt(n), np.eye(n))
            self.assert_almost_equal(value, 1 / math.sqrt(n), delta=1e-12)
            self.assert_equal(index, 0)

    def test_smallest_index_wins(self):
        basis = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 0.0]])
        self.assert_equal(max_abs_cosine([1.0, 0.0], basis)[1], 1)

    def test_errors(self):
        with self.assert_raises(InvalidInput):
            max_abs_cosine(np.zeros(3), np.eye(3))
        with self.assert_raises(InvalidInput):
            max_abs_cosine(np.ones(4), np.eye(3))
        with self.assert_raises(InvalidInput):
            max_abs_cosine(np.ones(3), np.zeros((3, 2)))


class EffectiveRankTestCase(BaseTestCase):

    def test_uniform(self):
        self.assert_almost_equal(effective_rank([1, 1, 1]), 3.0, delta=1e-12)

    def test_rank_one(self):
        self.assert_equal(effective_rank([1, 0, 0]), 1.0)

    def test_two_values(self):
        expected = math.exp(math.log(3) - 2 / 3 * math.log(2))
        self.assert_almost_equal(effective_rank([2, 1]), expected, delta=1e-12)
        self.assert_almost_equal(effective_rank([2, 1]), 1.8899, delta=1e-4)

    def test_scale_invariant(self):
        self.assert_almost_equal(effective_rank([4, 2, 1]), effective_rank([40, 20, 10]), delta=1e-12)

    def test_errors(self):
        for bad in ([0, 0, 0], [1, -1], [1, np.nan]):
            with self.assert_raises(InvalidInput):
                effective_rank(bad)


def brute_force_ranks(xs):
    return [1 + sum(y < x for y in xs) + (sum(y == x for y in xs) - 1) / 2 for x in xs]


def brute_force_spearman(xs, ys):
    rx, ry = brute_force_ranks(xs), brute_force_ranks(ys)
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    return cov / math.sqrt(vx * vy)


class SpearmanTestCase(BaseTestCase):

    def test_monotone(self):
        self.assert_equal(spearman([1, 2, 3], [10, 20, 30]), 1.0)

    def test_reversed(self):
        self.assert_equal(spearman([1, 2, 3], [30, 20, 10]), -1.0)

    def test_ties(self):
        xs, ys = [1, 2, 2, 4], [1, 3, 2, 4]
        # ranks (1, 2.5, 2.5, 4) and (1, 3, 2, 4)
        self.assert_equal(brute_force_ranks(xs), [1, 2.5, 2.5, 4])
        self.assert_almost_equal(spearman(xs, ys), brute_force_spearman(xs, ys), delta=1e-14)
        self.assert_almost_equal(spearman(xs, ys), 4.5 / math.sqrt(4.5 * 5), delta=1e-14)

    def test_errors(self):
        with self.assert_raises(InvalidInput):
            spearman([1, 2, 3], [1, 2])
        with self.assert_raises(InvalidInput):
            spearman([1, 2], [1, 2])
        with self.assert_raises(UndefinedCorrelation):
            spearman([1, 1, 1], [1, 2, 3])
        with self.assert_raises(UndefinedCorrelation):
            spearman([1, 2, 3], [5, 5, 5])


class RngTestCase(BaseTestCase):

    def test_same_seed_same_stream(self):
        self.assert_equal(make_rng(42).standard_normal(5).tobytes(), make_rng(42).standard_normal(5).tobytes())

    def test_seed_range(self):
        make_rng(2 ** 64 - 1)
        with self.assert_raises(InvalidInput):
            make_rng(-1)
        with self.assert_raises(InvalidInput):
            make_rng(2 ** 64)

    def test_random_orthogonal(self):
        q = random_orthogonal(16, make_rng(1))
        self.assert_true(orthonormality_defect(q) <= ORTHONORMALITY_TOL)
        self.assert_true(orthonormality_defect(q, axis=1) <= ORTHONORMALITY_TOL)

    def test_orthonormal_rows(self):
        a = orthonormal_rows(make_rng(2).standard_normal((4, 10)))
        self.assert_equal(a.shape, (4, 10))
        self.assert_allclose(svd(a).values, np.ones(4), atol=1e-12)
        with self.assert_raises(InvalidInput):
            orthonormal_rows(np.ones((3, 2)))
