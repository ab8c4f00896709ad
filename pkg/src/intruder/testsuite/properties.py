"""
randomized and exhaustive checks of the numeric kernels

These run under py.test only; the unittest cases in linalg.py form the self test.
"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ..constants import *  # NOQA
from ..helpers import InvalidInput, UndefinedCorrelation
from ..linalg import svd, reconstruction_error, orthonormality_defect, max_abs_cosine, abs_cosines
from ..linalg import effective_rank, spearman, make_rng, random_orthogonal, as_matrix
from .linalg import brute_force_spearman

finite_floats = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


def test_svd_contract_on_many_shapes():
    rng = make_rng(2024)
    for _ in range(200):
        rows, cols = rng.integers(1, 257, size=2)
        m = rng.standard_normal((rows, cols))
        result = svd(m)
        assert reconstruction_error(m, result) <= RECONSTRUCTION_TOL
        assert orthonormality_defect(result.left, axis=0) <= ORTHONORMALITY_TOL
        assert orthonormality_defect(result.right_t, axis=1) <= ORTHONORMALITY_TOL
        assert np.all(np.diff(result.values) <= 0)
        assert np.all(result.values >= 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=finite_floats))
def test_svd_invariants_hold(m):
    result = svd(m)
    assert np.all(np.diff(result.values) <= 0)
    assert np.all(result.values >= 0)
    # reconstruction is relative, so compare against the matrix norm with an absolute floor
    approx = (result.left * result.values) @ result.right_t
    assert np.linalg.norm(approx - m) <= RECONSTRUCTION_TOL * max(np.linalg.norm(m), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(2, 24))
def test_max_abs_cosine_sign_invariant(seed, n):
    rng = make_rng(seed)
    v = rng.standard_normal(n)
    basis = random_orthogonal(n, rng)
    flipped = basis.copy()
    flipped[:, rng.integers(n)] *= -1
    expected = max_abs_cosine(v, basis)
    assert max_abs_cosine(-v, basis) == expected
    assert max_abs_cosine(v, flipped) == expected


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 32))
def test_max_abs_cosine_lower_bound(seed, n):
    rng = make_rng(seed)
    v = rng.standard_normal(n)
    value, _ = max_abs_cosine(v / np.linalg.norm(v), random_orthogonal(n, rng))
    assert value >= 1 / math.sqrt(n) - 1e-12
    assert value <= 1.0


def test_abs_cosines_range():
    rng = make_rng(5)
    grid = abs_cosines(rng.standard_normal((6, 4)), rng.standard_normal((6, 3)))
    assert grid.shape == (4, 3)
    assert np.all((grid >= 0) & (grid <= 1))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=1e6, allow_nan=False), min_size=1, max_size=20).filter(lambda xs: any(x > 0 for x in xs)))
def test_effective_rank_bounded_by_positive_count(values):
    positive = sum(1 for x in values if x > 0)
    result = effective_rank(values)
    assert 1.0 - 1e-12 <= result <= positive + 1e-9


@given(st.floats(min_value=1e-3, max_value=1e3), st.integers(1, 30))
def test_effective_rank_equal_values(value, count):
    assert effective_rank([value] * count) == pytest.approx(count, rel=1e-12)


@pytest.mark.parametrize('n', [3, 4, 5, 6])
def test_spearman_matches_brute_force_on_all_permutations(n):
    xs = list(range(n))
    tied = [1, 1] + list(range(2, n))
    for ys in itertools.permutations(tied):
        assert spearman(xs, ys) == pytest.approx(brute_force_spearman(xs, ys), abs=1e-12)
    for ys in itertools.permutations(range(n)):
        assert spearman(tied, ys) == pytest.approx(brute_force_spearman(tied, ys), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=3, max_size=15))
def test_spearman_invariant_under_increasing_transform(pairs):
    xs = [float(x) for x, _ in pairs]
    ys = [float(y) for _, y in pairs]
    try:
        expected = spearman(xs, ys)
    except UndefinedCorrelation:
        return
    assert spearman([x ** 3 + 2 for x in xs], ys) == expected
    assert spearman(xs, [7 * y - 1 for y in ys]) == expected


def test_as_matrix():
    m = as_matrix([[1, 2], [3, 4]])
    assert m.dtype == np.float64 and m.flags.c_contiguous
    with pytest.raises(InvalidInput):
        as_matrix(np.zeros((0, 3)))
    with pytest.raises(InvalidInput):
        as_matrix([[np.inf]])
