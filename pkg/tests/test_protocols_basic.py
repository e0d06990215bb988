import numpy as np
import pytest

from eqproto.core import SharedCoins, Transcript, make_instance
from eqproto.protocols_basic import (
    PhaseSchedule,
    dimension_reduce,
    error_budget_threshold,
    exists_equal,
    generic_phase,
    simple_equality_testing,
)
from oracles import binomial_tail_exact

# grid of (k0, r, E) where all schedule entries are exact integer powers
EXACT_GRID = [
    (16, 2, 16),
    (64, 2, 64),
    (64, 3, 64),
    (256, 2, 256),
    (256, 4, 256),
    (1024, 2, 1024),
    (1024, 5, 1024),
    (4096, 2, 4096),
    (4096, 3, 4096),
    (4096, 4, 4096),
    (4096, 6, 4096),
    (65536, 4, 65536),
    (729, 3, 729),
]


class TestSchedules:
    def test_simple_frozen_example(self):
        s = PhaseSchedule.simple(16, 2, 16)
        assert s.k_bounds == (16, 4, 1)
        assert s.tests == (16, 64)
        assert s.test_bit_volume == 512 == 4 * 2 * 16 * 4

    @pytest.mark.parametrize("k0,r,E", EXACT_GRID)
    def test_simple_volume_identity(self, k0, r, E):
        s = PhaseSchedule.simple(k0, r, E)
        assert s.test_bit_volume == 4 * r * E * round(k0 ** (1 / r))

    def test_exists_frozen_example(self):
        s = PhaseSchedule.exists_equal(16, 2, 16)
        assert s.tests == (8, 32)
        assert 16 * s.tests[0] == 128 == 2 * 16 * 4

    @pytest.mark.parametrize("k0,r,E", EXACT_GRID)
    def test_exists_phase1_volume(self, k0, r, E):
        s = PhaseSchedule.exists_equal(k0, r, E)
        assert k0 * s.tests[0] == 2 * E * round(k0 ** (1 / r))

    def test_dimension_reduction_frozen_example(self):
        s = PhaseSchedule.dimension_reduction(1024, 8)
        assert s.tests == (5, 7, 19)
        assert s.k_bounds == (1024, 256, 32, 8)

    def test_all_entries_positive(self):
        for k0, r, E in [(10, 2, 10), (100, 3, 7), (5, 1, 9)]:
            s = PhaseSchedule.simple(min(k0, E), r, E)
            assert all(v >= 1 for v in s.k_bounds)
            assert all(v >= 1 for v in s.tests)


class TestGenericPhase:
    def test_all_equal_keeps_active(self):
        inst = make_instance(8, 8, set(range(8)), seed=1)
        t = Transcript()
        out = generic_phase(inst, np.arange(8), 5, 8, t, SharedCoins(2), "hamming")
        assert np.array_equal(out.active, np.arange(8))

    def test_zero_tests_is_noop(self):
        inst = make_instance(8, 8, set(), seed=1)
        t = Transcript()
        out = generic_phase(inst, np.arange(8), 0, 8, t, SharedCoins(2))
        assert np.array_equal(out.active, np.arange(8))
        assert t.total_bits == 0

    def test_survivor_mean_matches_binomial(self):
        # derived: each unequal coordinate survives w.p. 2^-l independently
        l = 4
        total = 0
        trials = 3000
        inst = make_instance(8, 16, set(), seed=3)
        for s in range(trials):
            t = Transcript()
            out = generic_phase(inst, np.arange(8), l, 8, t, SharedCoins(s))
            total += len(out.active)
        mean = total / trials
        expect = 8 * 2**-l
        sd = (8 * 2**-l * (1 - 2**-l) / trials) ** 0.5
        assert abs(mean - expect) < 5 * sd

    def test_explicit_cost(self):
        inst = make_instance(8, 8, set(), seed=4)
        t = Transcript()
        generic_phase(inst, np.arange(8), 6, 0, t, SharedCoins(5), "explicit")
        assert t.total_bits == 2 * 8 * 6

    def test_hamming_mode_matches_explicit_verdicts(self):
        inst = make_instance(12, 10, {1, 4, 7}, seed=6)
        te, th = Transcript(), Transcript()
        out_e = generic_phase(inst, np.arange(12), 7, 12, te, SharedCoins(7), "explicit")
        out_h = generic_phase(inst, np.arange(12), 7, 12, th, SharedCoins(7), "hamming")
        assert np.array_equal(out_e.active, out_h.active)


class TestDimensionReduce:
    def test_noop_when_k_small(self):
        inst = make_instance(8, 8, {0}, seed=1)
        t = Transcript()
        res = dimension_reduce(inst, 8, "testing", t, SharedCoins(1))
        assert len(res.active) == 8
        assert t.total_bits == 0

    def test_testing_mode_filters_false_positives(self):
        inst = make_instance(1024, 16, set(range(0, 1024, 4)), seed=2)
        t = Transcript()
        res = dimension_reduce(inst, 8, "testing", t, SharedCoins(3))
        survivors = set(res.active.tolist())
        assert set(range(0, 1024, 4)) <= survivors
        false_pos = len(survivors) - 256
        assert false_pos <= 8

    def test_exists_mode_one_sided(self):
        for s in range(30):
            inst = make_instance(256, 16, {s % 256}, seed=s)
            t = Transcript()
            res = dimension_reduce(inst, 4, "exists", t, SharedCoins(s + 1000))
            # the planted equality survives unless we already answered yes
            assert res.early_yes or (s % 256) in set(res.active.tolist())

    def test_communication_linear_in_k(self):
        inst = make_instance(4096, 16, set(), seed=5)
        t = Transcript()
        dimension_reduce(inst, 8, "testing", t, SharedCoins(6))
        assert t.total_bits <= 30 * 4096


class TestSimpleEqualityTesting:
    def test_all_equal_always_equal(self):
        inst = make_instance(16, 12, set(range(16)), seed=1)
        res = simple_equality_testing(inst, 2, 16, seed=2)
        assert res.equal_mask.all()

    def test_verdicts_match_ground_truth(self):
        for s in range(40):
            eq = set(np.random.default_rng(s).choice(16, size=5, replace=False).tolist())
            inst = make_instance(16, 16, eq, seed=s)
            res = simple_equality_testing(inst, 2, 16, seed=s + 1)
            assert set(np.nonzero(res.equal_mask)[0].tolist()) == eq

    def test_equal_never_refuted(self):
        for s in range(30):
            inst = make_instance(20, 14, {0, 3, 9}, seed=s)
            res = simple_equality_testing(inst, 2, 20, seed=s + 7)
            assert res.equal_mask[[0, 3, 9]].all()

    def test_monotone_refinement(self):
        inst = make_instance(32, 12, {1, 2}, seed=3)
        res = simple_equality_testing(inst, 3, 32, seed=4)
        sizes = [n for (_, n, _, _) in res.trace]
        assert sizes == sorted(sizes, reverse=True)

    def test_strict_domain_rejection(self):
        inst = make_instance(16, 12, set(), seed=1)
        with pytest.raises(ValueError):
            simple_equality_testing(inst, 2, 10, strict_domain=True, seed=1)

    def test_determinism(self):
        inst = make_instance(16, 12, {2}, seed=9)
        t1, t2 = Transcript(), Transcript()
        simple_equality_testing(inst, 2, 16, t1, SharedCoins(5))
        simple_equality_testing(inst, 2, 16, t2, SharedCoins(5))
        assert t1.to_json() == t2.to_json()

    def test_error_rate_small_sample(self):
        # tiny version of the acceptance Monte Carlo
        failures = 0
        trials = 2000
        inst = make_instance(16, 16, set(), seed=0)
        for s in range(trials):
            res = simple_equality_testing(inst, 2, 10, seed=s)
            failures += res.equal_mask.any()
        assert failures <= 10


class TestErrorBudgetThreshold:
    def test_k1_floor(self):
        assert error_budget_threshold(16, 1) == 18
        assert error_budget_threshold(5, 1) == 7

    def test_frozen_golden_16_16(self):
        assert error_budget_threshold(16, 16) == 72

    def test_exact_tail_bound_holds(self):
        for E, k in [(8, 4), (16, 16), (10, 16), (40, 64), (32, 8)]:
            ep = error_budget_threshold(E, k)
            assert ep >= E + 2
            assert binomial_tail_exact(ep, k) <= binomial_tail_exact(E + 1, 1)
            if ep > E + 2:
                assert binomial_tail_exact(ep - 1, k) > binomial_tail_exact(E + 1, 1)

    def test_monotone_grid(self):
        grid_e = [4, 8, 16, 32]
        grid_k = [1, 2, 8, 32]
        vals = {(E, k): error_budget_threshold(E, k) for E in grid_e for k in grid_k}
        for i in range(len(grid_e) - 1):
            for k in grid_k:
                assert vals[(grid_e[i], k)] <= vals[(grid_e[i + 1], k)]
        for E in grid_e:
            for j in range(len(grid_k) - 1):
                assert vals[(E, grid_k[j])] <= vals[(E, grid_k[j + 1])]


class TestExistsEqual:
    def test_planted_equality_always_yes(self):
        for s in range(50):
            inst = make_instance(16, 16, {s % 16}, seed=s)
            res = exists_equal(inst, 2, 16, seed=s + 1)
            assert res.answer

    def test_all_equal_spends_budget_fast(self):
        inst = make_instance(16, 12, set(range(16)), seed=1)
        res = exists_equal(inst, 2, 16, seed=2)
        assert res.answer and res.early
        # only phase 1 was paid for
        assert len(res.trace) == 1

    def test_budget_identity(self):
        inst = make_instance(16, 16, {0, 1}, seed=3)
        res = exists_equal(inst, 2, 16, seed=4)
        recomputed = sum(
            res.schedule.tests[j - 1] * n for (j, n, _, _) in res.trace
        )
        assert res.budget_spent == recomputed

    def test_all_unequal_usually_no(self):
        noes = 0
        trials = 500
        inst = make_instance(16, 16, set(), seed=5)
        for s in range(trials):
            res = exists_equal(inst, 2, 12, seed=s)
            noes += not res.answer
        assert noes == trials  # false-yes rate is ~2^-12; none expected here

    def test_strict_domain_requires_E_ge_k(self):
        inst = make_instance(16, 12, set(), seed=1)
        with pytest.raises(ValueError):
            exists_equal(inst, 2, 10, strict_domain=True, seed=1)

    def test_phase1_cost_explicit(self):
        inst = make_instance(16, 16, set(range(16)), seed=6)
        res = exists_equal(inst, 2, 16, seed=7)
        assert res.trace[0][2] == 16 * res.schedule.tests[0]
