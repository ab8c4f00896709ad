import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ..checkpoint import Checkpoint, validate_pair
from ..constants import *  # NOQA
from ..helpers import InvalidInput, MismatchError, UndefinedCorrelation
from ..linalg import make_rng, svd
from ..spectral import ScanConfig, count_intruders, scan_model, epsilon_sweep, k_sweep, similarity_grid
from ..spectral import evolution_trace, correlate, update_effective_ranks, matrix_profile
from ..spectral import report_to_json, report_from_json, report_to_csv, sweep_to_csv, grid_to_csv, trace_to_json
from . import BaseTestCase, INJECTED_COSINE, injected_pair, seeded_matrix


def injected_checkpoints(names=('layer.0', 'layer.1')):
    base, tuned = injected_pair()
    return validate_pair(Checkpoint({n: base for n in names}), Checkpoint({n: tuned for n in names}))


def random_pair(seed, rows=8, cols=6, rank=2, scale=1.0):
    rng = make_rng(seed)
    base = rng.standard_normal((rows, cols))
    update = scale * rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    return base, base + update


class ScanConfigTestCase(BaseTestCase):

    def test_defaults(self):
        cfg = ScanConfig()
        self.assert_equal((cfg.epsilon, cfg.k, cfg.side), (0.5, 10, 'left'))

    def test_invalid(self):
        for epsilon in (0, 1, 1.5, -0.1):
            with self.assert_raises(InvalidInput):
                ScanConfig(epsilon)
        for k in (0, -1, 2.5, True):
            with self.assert_raises(InvalidInput):
                ScanConfig(0.5, k)
        with self.assert_raises(InvalidInput):
            ScanConfig(0.5, 3, 'up')


class CountIntrudersTestCase(BaseTestCase):

    def test_injected_direction_is_an_intruder(self):
        base, tuned = injected_pair()
        report = count_intruders(base, tuned, ScanConfig(0.6, 1))
        self.assert_equal(report.n_intruders, 1)
        intruder = report.intruders[0]
        self.assert_equal(intruder.rank, 0)
        self.assert_almost_equal(intruder.cosine, INJECTED_COSINE, delta=1e-12)
        self.assert_almost_equal(intruder.sigma, 6.0, delta=1e-12)

    def test_threshold_below_cosine(self):
        base, tuned = injected_pair()
        self.assert_equal(count_intruders(base, tuned, ScanConfig(0.5, 1)).n_intruders, 0)

    def test_remaining_directions_are_not_intruders(self):
        # every unit vector orthogonal to (1,1,1) has some |coordinate| >= 1/sqrt(2)
        base, tuned = injected_pair()
        self.assert_equal(count_intruders(base, tuned, ScanConfig(0.7, 3)).ranks, [0])

    def test_identical_matrices(self):
        m = seeded_matrix(7, 12, 9)
        self.assert_equal(count_intruders(m, m, ScanConfig(0.99, 9)).n_intruders, 0)

    def test_k_out_of_range(self):
        base, tuned = injected_pair()
        with self.assert_raises(InvalidInput):
            count_intruders(base, tuned, ScanConfig(0.5, 4))
        report = count_intruders(base, tuned, ScanConfig(0.6, 10), clamp=True)
        self.assert_equal((report.k, report.clamped), (3, True))

    def test_shape_mismatch(self):
        with self.assert_raises(InvalidInput):
            count_intruders(np.eye(3), np.eye(4), ScanConfig(0.5, 1))

    def test_intruders_sorted_and_below_threshold(self):
        for seed in range(20):
            base, tuned = random_pair(seed, scale=3.0)
            cfg = ScanConfig(0.6, 6)
            report = count_intruders(base, tuned, cfg)
            self.assert_equal(report.ranks, sorted(set(report.ranks)))
            self.assert_true(all(i.cosine < cfg.epsilon and i.rank < cfg.k for i in report.intruders))
            spectrum = list(svd(tuned).values)
            self.assert_equal([i.sigma for i in report.intruders], [spectrum[r] for r in report.ranks])

    def test_right_side(self):
        base, tuned = injected_pair()
        # symmetric matrices: right singular vectors are the left ones
        report = count_intruders(base, tuned, ScanConfig(0.6, 1, side='right'))
        self.assert_equal(report.ranks, [0])

    def test_sign_flip_invariance(self):
        for seed in range(10):
            base, tuned = random_pair(seed, rows=10, cols=10, scale=2.0)
            cfg = ScanConfig(0.5, 10)
            expected = count_intruders(base, tuned, cfg)
            for b, t in ((-base, tuned), (base, -tuned)):
                flipped = count_intruders(b, t, cfg)
                self.assert_equal(flipped.ranks, expected.ranks)
                self.assert_allclose([i.cosine for i in flipped.intruders],
                                     [i.cosine for i in expected.intruders], atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 12), st.integers(1, 12), st.floats(0.01, 0.99))
def test_identical_pair_has_no_intruders(seed, rows, cols, epsilon):
    m = make_rng(seed).standard_normal((rows, cols))
    assert count_intruders(m, m, ScanConfig(epsilon, min(rows, cols))).n_intruders == 0


def test_detection_matches_analytic_threshold():
    base, tuned = injected_pair()
    for epsilon in np.linspace(0.01, 0.99, 197):
        if abs(epsilon - INJECTED_COSINE) <= 1e-9:
            continue
        flagged = count_intruders(base, tuned, ScanConfig(epsilon, 1)).n_intruders == 1
        assert flagged == (epsilon > INJECTED_COSINE)


def test_scan_model_orders_and_sums(tmpdir):
    base, tuned = injected_pair()
    pair = validate_pair(Checkpoint({'z': base, 'a': base, 'm': np.eye(3)}),
                         Checkpoint({'z': tuned, 'a': tuned, 'm': np.eye(3)}))
    report = scan_model(pair, ScanConfig(0.6, 10))
    assert [m.name for m in report.matrices] == ['a', 'm', 'z']
    assert [m.n_intruders for m in report.matrices] == [1, 0, 1]
    assert report.total == 2
    assert all(m.clamped and m.k == 3 for m in report.matrices)
    assert report.matrix('z').ranks == [0]
    with pytest.raises(MismatchError):
        report.matrix('nope')


def test_scan_model_parallel_equals_sequential():
    entries_base, entries_tuned = {}, {}
    for i in range(6):
        base, tuned = random_pair(i, rows=16, cols=12, scale=2.0)
        entries_base['w%d' % i], entries_tuned['w%d' % i] = base, tuned
    pair = validate_pair(Checkpoint(entries_base), Checkpoint(entries_tuned))
    cfg = ScanConfig(0.5, 10)
    assert scan_model(pair, cfg, workers=4) == scan_model(pair, cfg, workers=1)


class SweepTestCase(BaseTestCase):

    def test_identical_pair(self):
        c = Checkpoint({'w': seeded_matrix(1, 6, 6)})
        pair = validate_pair(c, c)
        self.assert_equal(epsilon_sweep(pair, [0.1, 0.5, 0.99], k=6), [0, 0, 0])
        self.assert_equal(k_sweep(pair, [1, 3, 6], epsilon=0.99), [0, 0, 0])

    def test_injected_step(self):
        pair = injected_checkpoints()
        totals = epsilon_sweep(pair, [0.1, 0.3, 0.5, 0.57, 0.58, 0.6, 0.7], k=3)
        self.assert_equal(totals, [0, 0, 0, 0, 2, 2, 2])

    def test_single_injected_direction(self):
        pair = injected_checkpoints()
        self.assert_equal(k_sweep(pair, [1, 3], epsilon=0.6), [2, 2])

    def test_full_spectrum(self):
        pair = injected_checkpoints(names=('w', ))
        self.assert_equal(k_sweep(pair, [3], epsilon=0.99), [3])

    def test_invalid_grids(self):
        pair = injected_checkpoints()
        with self.assert_raises(InvalidInput):
            epsilon_sweep(pair, [0.5, 0.4], k=1)
        with self.assert_raises(InvalidInput):
            epsilon_sweep(pair, [0.5, 1.5], k=1)
        with self.assert_raises(InvalidInput):
            k_sweep(pair, [1, 1], epsilon=0.5)
        with self.assert_raises(InvalidInput):
            k_sweep(pair, [1, 4], epsilon=0.5)
        self.assert_equal(k_sweep(pair, [1, 4], epsilon=0.6, clamp=True), [2, 2])


def test_sweeps_are_monotone_on_random_pairs():
    epsilons = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    for seed in range(50):
        base, tuned = random_pair(seed, rows=10, cols=8, rank=3, scale=float(1 + seed % 5))
        pair = validate_pair(Checkpoint({'w': base}), Checkpoint({'w': tuned}))
        eps_totals = epsilon_sweep(pair, epsilons, k=8)
        k_totals = k_sweep(pair, list(range(1, 9)), epsilon=0.5)
        assert all(b >= a for a, b in zip(eps_totals, eps_totals[1:]))
        assert all(b >= a for a, b in zip(k_totals, k_totals[1:]))


class SimilarityGridTestCase(BaseTestCase):

    def test_identical(self):
        m = svd(seeded_matrix(4, 8, 8))
        # distinct singular values
        w = (m.left * np.array([8, 7, 6, 5, 4, 3, 2, 1.0])) @ m.right_t
        grid = similarity_grid(w, w, 5, 5).grid
        self.assert_equal(grid.shape, (5, 5))
        self.assert_allclose(np.diag(grid), np.ones(5), atol=1e-10)
        self.assert_allclose(grid - np.diag(np.diag(grid)), np.zeros((5, 5)), atol=1e-10)

    def test_injected_column(self):
        base, tuned = injected_pair()
        grid = similarity_grid(base, tuned, 3, 3).grid
        self.assert_allclose(grid[:, 0], np.full(3, INJECTED_COSINE), atol=1e-12)

    def test_range(self):
        for seed in range(10):
            base, tuned = random_pair(seed, scale=3.0)
            grid = similarity_grid(base, tuned, 6, 4).grid
            self.assert_equal(grid.shape, (6, 4))
            self.assert_true(np.all((grid >= 0) & (grid <= 1)))

    def test_out_of_range(self):
        with self.assert_raises(InvalidInput):
            similarity_grid(np.eye(3), np.eye(3), 4, 1)


def snapshots_of(matrices, start=0):
    return [Checkpoint({'w': m}, metadata={'step': str(start + 10 * i)}) for i, m in enumerate(matrices)]


class EvolutionTraceTestCase(BaseTestCase):

    def test_constant(self):
        m = seeded_matrix(9, 5, 5)
        base = Checkpoint({'w': m})
        trace = evolution_trace(snapshots_of([m, m, m]), 'w', [0, 1, 2], base)
        self.assert_equal(trace.steps, [0, 10, 20])
        self.assert_allclose(trace.cosines, np.ones((3, 3)), atol=1e-10)
        self.assert_allclose(trace.sigmas, np.tile(svd(m).values[:3], (3, 1)), atol=0)

    def test_growing_injection(self):
        base, _ = injected_pair()
        v = np.full(3, 1 / np.sqrt(3))
        snaps = snapshots_of([base + t * 5 * np.outer(v, v) for t in (0.2, 0.6, 1.0)])
        trace = evolution_trace(snaps, 'w', [0], Checkpoint({'w': base}))
        self.assert_allclose(trace.sigmas[:, 0], [2, 4, 6], atol=1e-12)
        self.assert_allclose(trace.cosines[:, 0], np.full(3, INJECTED_COSINE), atol=1e-12)

    def test_steps_fall_back_to_positions(self):
        m = np.eye(2)
        trace = evolution_trace([Checkpoint({'w': m}), Checkpoint({'w': m})], 'w', [0], Checkpoint({'w': m}))
        self.assert_equal(trace.steps, [0, 1])

    def test_errors(self):
        m = np.eye(3)
        base = Checkpoint({'w': m})
        with self.assert_raises(InvalidInput):
            evolution_trace(snapshots_of([m]), 'w', [0], base)
        with self.assert_raises(MismatchError):
            evolution_trace(snapshots_of([m, m]), 'x', [0], base)
        with self.assert_raises(MismatchError):
            evolution_trace([Checkpoint({'w': m}), Checkpoint({'x': m})], 'w', [0], base)
        with self.assert_raises(InvalidInput):
            evolution_trace(snapshots_of([m, m]), 'w', [3], base)
        backwards = [Checkpoint({'w': m}, {'step': '5'}), Checkpoint({'w': m}, {'step': '5'})]
        with self.assert_raises(InvalidInput):
            evolution_trace(backwards, 'w', [0], base)


class CorrelateTestCase(BaseTestCase):

    def test_examples(self):
        self.assert_equal(correlate([1, 2, 3], [0.1, 0.2, 0.3]), 1.0)
        self.assert_equal(correlate([1, 2, 3], [0.3, 0.2, 0.1]), -1.0)

    def test_errors_propagate(self):
        with self.assert_raises(UndefinedCorrelation):
            correlate([0, 0, 0], [0.1, 0.2, 0.3])
        with self.assert_raises(InvalidInput):
            correlate([1, 2], [0.1, 0.2])


def test_update_effective_ranks():
    base, tuned = injected_pair()
    pair = validate_pair(Checkpoint({'a': base, 'b': base}), Checkpoint({'a': tuned, 'b': base}))
    ranks = update_effective_ranks(pair)
    assert ranks['a'] == pytest.approx(1.0, abs=1e-12)
    assert ranks['b'] == 0.0


def test_matrix_profile_nearest():
    base, tuned = injected_pair()
    profile = matrix_profile(base, tuned)
    assert profile.sigmas[0] == pytest.approx(6.0)
    assert 0 <= profile.nearest[0] < 3


class SerializationTestCase(BaseTestCase):

    def setUp(self):
        self.report = scan_model(injected_checkpoints(), ScanConfig(0.6, 1), effective_ranks=True)

    def test_json_schema(self):
        obj = json.loads(json.dumps(report_to_json(self.report)))
        self.assert_equal(obj['total'], 2)
        self.assert_equal(sorted(obj), ['epsilon', 'k', 'matrices', 'side', 'total'])
        matrix = obj['matrices'][0]
        self.assert_equal(matrix['name'], 'layer.0')
        self.assert_equal(sorted(matrix['intruders'][0]), ['cosine', 'nearest', 'rank', 'sigma'])
        self.assert_equal(report_from_json(obj), self.report)

    def test_json_total_checked(self):
        obj = report_to_json(self.report)
        obj['total'] = 5
        with self.assert_raises(InvalidInput):
            report_from_json(obj)
        with self.assert_raises(InvalidInput):
            report_from_json({'matrices': []})

    def test_csv(self):
        lines = report_to_csv(self.report).splitlines()
        self.assert_equal(lines[0], 'name,n_intruders,indices,cosines,sigmas')
        self.assert_equal(len(lines), 3)
        name, count, indices, cosines, sigmas = lines[1].split(',')
        self.assert_equal((name, count, indices), ('layer.0', '1', '0'))
        self.assert_almost_equal(float(cosines), INJECTED_COSINE, delta=1e-12)
        self.assert_almost_equal(float(sigmas), 6.0, delta=1e-12)

    def test_csv_quotes_names_with_commas(self):
        base, tuned = injected_pair()
        pair = validate_pair(Checkpoint({'attn.q,k': base, 'mlp': base}), Checkpoint({'attn.q,k': tuned, 'mlp': tuned}))
        rows = list(csv.reader(io.StringIO(report_to_csv(scan_model(pair, ScanConfig(0.6, 1))))))
        self.assert_equal([row[0] for row in rows], ['name', 'attn.q,k', 'mlp'])
        self.assert_true(all(len(row) == 5 for row in rows))
        self.assert_equal(rows[1][1:3], ['1', '0'])

    def test_sweep_and_grid_csv(self):
        self.assert_equal(sweep_to_csv('k', [1, 3], [2, 2]), 'k,total\n1,2\n3,2\n')
        self.assert_equal(sweep_to_csv('epsilon', [0.5], [0]), 'epsilon,total\n0.5,0\n')
        base, tuned = injected_pair()
        lines = grid_to_csv(similarity_grid(base, tuned, 2, 3)).splitlines()
        self.assert_equal(lines[0], 'base\\tuned,0,1,2')
        self.assert_equal(len(lines), 3)

    def test_trace_json(self):
        m = np.eye(2)
        trace = evolution_trace(snapshots_of([m, 2 * m]), 'w', [0], Checkpoint({'w': m}))
        obj = json.loads(json.dumps(trace_to_json(trace)))
        self.assert_equal(obj['steps'], [0, 10])
        self.assert_allclose(obj['sigmas'], [[1.0], [2.0]])
