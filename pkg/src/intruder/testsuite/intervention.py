import numpy as np
import pytest

from ..checkpoint import Checkpoint, validate_pair
from ..constants import *  # NOQA
from ..helpers import InvalidInput, MismatchError
from ..intervention import LoraAdapter, merge_adapter, scale_direction, inject_rank_one
from ..intervention import ScalingPlan, PlanEntry, apply_plan, select_top_intruders, select_neighbors
from ..intervention import plan_to_json, plan_from_json
from ..linalg import svd, make_rng, random_orthogonal, effective_rank
from ..spectral import ScanConfig, scan_model, count_intruders, Intruder, MatrixIntruderReport, ModelIntruderReport
from . import BaseTestCase, injected_pair, seeded_matrix


class ScaleDirectionTestCase(BaseTestCase):

    def test_lambda_one_is_identity(self):
        m = seeded_matrix(0, 5, 4)
        self.assert_equal(scale_direction(m, 2, 1.0).tobytes(), m.tobytes())

    def test_remove_top(self):
        self.assert_allclose(scale_direction(np.diag([3.0, 2.0, 1.0]), 0, 0.0), np.diag([0.0, 2.0, 1.0]))

    def test_amplify_middle(self):
        self.assert_allclose(scale_direction(np.diag([3.0, 2.0, 1.0]), 1, 2.0), np.diag([3.0, 4.0, 1.0]))

    def test_errors(self):
        m = np.diag([3.0, 2.0, 1.0])
        for index in (-1, 3, 1.5):
            with self.assert_raises(InvalidInput):
                scale_direction(m, index, 0.5)
        for lam in (-0.5, np.inf, np.nan):
            with self.assert_raises(InvalidInput):
                scale_direction(m, 0, lam)

    def test_removal_zeroes_one_singular_value(self):
        for seed in range(20):
            m = seeded_matrix(seed, 7, 5)
            index = seed % 5
            values = svd(m).values.copy()
            values[index] = 0
            self.assert_allclose(svd(scale_direction(m, index, 0.0)).values, np.sort(values)[::-1], atol=1e-9)

    def test_commutes_with_orthogonal_change_of_basis(self):
        for seed in range(10):
            rng = make_rng(seed)
            w = rng.standard_normal((6, 6))
            q, p = random_orthogonal(6, rng), random_orthogonal(6, rng)
            index, lam = seed % 6, 0.25 * (seed % 5)
            self.assert_allclose(scale_direction(q @ w @ p.T, index, lam), q @ scale_direction(w, index, lam) @ p.T, atol=1e-9)


class InjectRankOneTestCase(BaseTestCase):

    def test_lambda_zero(self):
        w = seeded_matrix(1, 4, 4)
        v = np.array([1.0, 0, 0, 0])
        self.assert_equal(inject_rank_one(w, v, 0.0).tobytes(), w.tobytes())

    def test_identity(self):
        v = np.full(3, 1 / np.sqrt(3))
        result = svd(inject_rank_one(np.eye(3), v, 5.0))
        self.assert_almost_equal(result.values[0], 6.0, delta=1e-12)
        self.assert_allclose(np.abs(result.left[:, 0]), v, atol=1e-12)

    def test_zero_base(self):
        result = svd(inject_rank_one(np.zeros((3, 3)), [1.0, 0.0, 0.0], 2.0))
        self.assert_allclose(result.values, [2.0, 0.0, 0.0])

    def test_preserves_symmetry(self):
        rng = make_rng(3)
        g = rng.standard_normal((8, 8))
        v = rng.standard_normal(8)
        v /= np.linalg.norm(v)
        out = inject_rank_one(g + g.T, v, 3.0)
        self.assert_equal(out.tobytes(), out.T.copy().tobytes())

    def test_errors(self):
        with self.assert_raises(InvalidInput):
            inject_rank_one(np.zeros((3, 2)), [1.0, 0.0, 0.0], 1.0)
        with self.assert_raises(InvalidInput):
            inject_rank_one(np.eye(3), [1.0, 1.0, 0.0], 1.0)
        with self.assert_raises(InvalidInput):
            inject_rank_one(np.eye(3), [1.0, 0.0], 1.0)


def test_rank_one_injection_law():
    n, lam = 64, 10.0
    aligned = detected = 0
    for seed in range(100):
        rng = make_rng(seed)
        g = rng.standard_normal((n, n))
        w = g / svd(g).values[0]
        v = rng.standard_normal(n)
        v /= np.linalg.norm(v)
        tuned = inject_rank_one(w, v, lam)
        top = svd(tuned).left[:, 0]
        if abs(top @ v) >= 0.99:
            aligned += 1
        report = count_intruders(w, tuned, ScanConfig(0.5, 1))
        if report.ranks == [0]:
            detected += 1
    assert aligned >= 95
    assert detected >= 95


class LoraAdapterTestCase(BaseTestCase):

    def test_zero_b_merges_to_base(self):
        base = seeded_matrix(2, 4, 3)
        adapter = LoraAdapter(np.zeros((4, 2)), seeded_matrix(3, 2, 3), 8.0)
        self.assert_equal(merge_adapter(base, adapter).tobytes(), (base + 0.0).tobytes())

    def test_outer_product(self):
        base = np.array([[1.0, 2.0], [3.0, 4.0]])
        adapter = LoraAdapter([[1.0], [0.0]], [[0.0, 3.0]], 2.0)
        self.assert_equal(adapter.rank, 1)
        self.assert_allclose(merge_adapter(base, adapter), base + 2 * np.array([[0.0, 3.0], [0.0, 0.0]]))

    def test_linear_in_alpha(self):
        base = seeded_matrix(4, 5, 5)
        b, a = seeded_matrix(5, 5, 2), seeded_matrix(6, 2, 5)
        twice = merge_adapter(base, LoraAdapter(b, a, 4.0)) - base
        once = merge_adapter(base, LoraAdapter(b, a, 2.0)) - base
        self.assert_allclose(twice, 2 * once, atol=1e-12)

    def test_validation(self):
        with self.assert_raises(InvalidInput):
            LoraAdapter(np.zeros((4, 2)), np.zeros((3, 4)), 1.0)
        with self.assert_raises(InvalidInput):
            LoraAdapter(np.zeros((4, 2)), np.zeros((2, 4)), 0.0)
        with self.assert_raises(InvalidInput):
            LoraAdapter(np.zeros((2, 3)), np.zeros((3, 4)), 1.0)
        with self.assert_raises(InvalidInput):
            merge_adapter(np.zeros((4, 5)), LoraAdapter(np.zeros((4, 2)), np.zeros((2, 4)), 1.0))

    def test_initial(self):
        adapter = LoraAdapter.initial((6, 8), 3, 6.0, make_rng(0))
        self.assert_equal(adapter.b.shape, (6, 3))
        self.assert_equal(np.count_nonzero(adapter.b), 0)
        self.assert_equal(adapter.scaling, 2.0)
        frozen = LoraAdapter.initial((6, 8), 3, 6.0, make_rng(0), orthonormal_a=True)
        self.assert_allclose(svd(frozen.a).values, np.ones(3))


@pytest.mark.parametrize('rank', [1, 4, 16])
def test_merged_update_is_low_rank(rank):
    rng = make_rng(rank)
    base = rng.standard_normal((64, 64))
    adapter = LoraAdapter(rng.standard_normal((64, rank)), rng.standard_normal((rank, 64)), 8.0)
    values = svd(merge_adapter(base, adapter) - base).values
    assert values[rank] <= 1e-8 * values[0]
    assert effective_rank(values) <= rank + 1e-6


def report_of(*matrices, epsilon=0.5, k=10):
    return ModelIntruderReport(epsilon, k, 'left', tuple(
        MatrixIntruderReport(name, k, False, tuple(Intruder(r, 0.1, s, 0) for r, s in intruders), None)
        for name, intruders in matrices))


class SelectTestCase(BaseTestCase):

    def test_no_intruders(self):
        self.assert_equal(len(select_top_intruders(report_of(('a', []), ('b', [])), 0.5)), 0)

    def test_largest_sigma(self):
        plan = select_top_intruders(report_of(('w', [(0, 6.0), (3, 2.0)])), 0.5)
        self.assert_equal(plan['w'], PlanEntry(0, 0.5))

    def test_tie_goes_to_smallest_rank(self):
        plan = select_top_intruders(report_of(('w', [(4, 2.0), (1, 2.0)])), 0.0)
        self.assert_equal(plan['w'].index, 1)

    def test_one_entry_per_matrix_with_intruders(self):
        plan = select_top_intruders(report_of(('a', [(2, 1.0)]), ('b', [])), 2.0)
        self.assert_equal(list(plan), ['a'])

    def test_neighbors(self):
        report = report_of(('a', [(0, 5.0)]), ('b', [(0, 5.0), (1, 4.0)]), ('c', [(2, 3.0), (3, 2.0)]), ('d', []))
        plan = select_neighbors(report, 0.5)
        self.assert_equal(plan.entries, {'a': PlanEntry(1, 0.5), 'c': PlanEntry(1, 0.5)})

    def test_neighbor_within_k(self):
        report = report_of(('a', [(2, 5.0)]), k=3)
        self.assert_equal(select_neighbors(report, 0.5)['a'].index, 1)


class ApplyPlanTestCase(BaseTestCase):

    def setUp(self):
        base, tuned = injected_pair()
        self.pair = validate_pair(Checkpoint({'a': base, 'b': base, 'c': np.diag([3.0, 2.0, 1.0])}),
                                  Checkpoint({'a': tuned, 'b': tuned, 'c': np.diag([3.0, 2.0, 1.0])}))

    def test_empty_plan(self):
        self.assert_equal(apply_plan(self.pair.tuned, ScalingPlan()), self.pair.tuned)

    def test_lambda_one(self):
        self.assert_equal(apply_plan(self.pair.tuned, ScalingPlan({'a': (0, 1.0)})), self.pair.tuned)

    def test_unknown_tensor(self):
        with self.assert_raises(MismatchError):
            apply_plan(self.pair.tuned, ScalingPlan({'zz': (0, 0.5)}))

    def test_removal_clears_intruders(self):
        cfg = ScanConfig(0.6, 1)
        report = scan_model(self.pair, cfg)
        self.assert_equal(report.total, 2)
        plan = select_top_intruders(report, 0.0)
        self.assert_equal(sorted(plan), ['a', 'b'])
        edited = apply_plan(self.pair.tuned, plan)
        self.assert_equal(edited['c'].tobytes(), self.pair.tuned['c'].tobytes())
        rescan = scan_model(validate_pair(self.pair.base, edited), cfg)
        for name, entry in plan.items():
            self.assert_not_in(entry.index, rescan.matrix(name).ranks)

    def test_amplify_doubles_sigma(self):
        edited = apply_plan(self.pair.tuned, ScalingPlan({'a': (0, 2.0)}))
        self.assert_almost_equal(svd(edited['a']).values[0], 12.0, delta=1e-10)


def test_plan_json():
    plan = ScalingPlan({'b': (1, 0.5), 'a': (0, 2.0)})
    obj = plan_to_json(plan)
    assert obj == {'a': {'index': 0, 'lambda': 2.0}, 'b': {'index': 1, 'lambda': 0.5}}
    assert plan_from_json(obj) == plan
    assert plan.with_lambda(0.0)['b'] == PlanEntry(1, 0.0)
    for bad in ([], {'a': {'index': 0}}, {'a': {'index': -1, 'lambda': 1.0}}, {'a': {'index': 0, 'lambda': -1}}):
        with pytest.raises(InvalidInput):
            plan_from_json(bad)
