"""Tests for the set-intersection <-> equality-testing reductions."""

import itertools
import math
from types import SimpleNamespace

import numpy as np
import pytest

from eqproto.core import Direction, SharedCoins, Transcript, derive_seed
from eqproto.protocols_basic import exists_equal, simple_equality_testing
from eqproto.reductions import (
    PerfectHashEncoding,
    UniverseReduction,
    build_perfect_hash,
    eq_via_setint,
    eval_perfect_hash,
    reduce_universe,
    setint_via_eq,
)


def _random_set(rng, k, universe_bits):
    hi = 1 << universe_bits
    vals = set()
    while len(vals) < k:
        vals.update(int(v) for v in rng.integers(0, hi, size=k - len(vals)))
    return vals


class TestPerfectHash:
    def test_injective_on_build_set(self):
        rng = np.random.default_rng(7)
        for trial in range(200):
            k = int(rng.integers(1, 40))
            u = int(rng.integers(max(6, k.bit_length() + 1), 33))
            A = _random_set(rng, k, u)
            enc = build_perfect_hash(A, u, SharedCoins(derive_seed(7, trial)))
            slots = {enc.evaluate(a) for a in A}
            assert len(slots) == k
            assert all(0 <= s < k for s in slots)

    def test_singleton(self):
        enc = build_perfect_hash({12345}, 20, SharedCoins(1))
        assert enc.evaluate(12345) == 0
        # every universe point lands in the single slot
        assert eval_perfect_hash(enc, 999) == 0

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(11)
        for trial in range(50):
            k = int(rng.integers(1, 70))
            u = int(rng.integers(8, 33))
            A = _random_set(rng, k, u)
            enc = build_perfect_hash(A, u, SharedCoins(derive_seed(11, trial)))
            wire = enc.to_bits()
            dec = PerfectHashEncoding.from_bits(wire)
            assert dec == enc
            probes = [int(v) for v in rng.integers(0, 1 << u, size=32)]
            for v in list(A) + probes:
                assert dec.evaluate(v) == enc.evaluate(v)

    def test_encoding_size_bound(self):
        k, u = 64, 32
        rng = np.random.default_rng(13)
        sizes = []
        for trial in range(300):
            A = _random_set(rng, k, u)
            enc = build_perfect_hash(A, u, SharedCoins(derive_seed(13, trial)))
            sizes.append(enc.total_bits)
        bound = 12 * k + 4 * math.log2(u)
        assert sum(sizes) / len(sizes) <= bound

    def test_rejects_out_of_universe(self):
        with pytest.raises(ValueError):
            build_perfect_hash({1 << 10}, 10, SharedCoins(0))


def _oracle_eq(instance, transcript, coins, lead):
    """Zero-error inner protocol used to isolate the reduction itself."""
    from eqproto.core import Bits

    transcript.record(lead, "oracle", Bits(0, 1))
    other = Direction.A_TO_B if lead is Direction.B_TO_A else Direction.B_TO_A
    transcript.record(other, "oracle", Bits(0, 1))
    return SimpleNamespace(equal_mask=np.asarray(instance.x == instance.y))


def _simple_et_inner(E, r=2):
    def inner(instance, transcript, coins, lead):
        return simple_equality_testing(
            instance, r, max(E, 1), transcript, coins, lead=lead
        )

    return inner


class TestSetIntViaEq:
    def test_matches_ground_truth_with_oracle(self):
        rng = np.random.default_rng(23)
        for trial in range(200):
            u = int(rng.integers(6, 20))
            ka = int(rng.integers(1, 30))
            kb = int(rng.integers(1, 30))
            A = _random_set(rng, ka, u)
            B = _random_set(rng, kb, u)
            # plant some overlap half the time
            if trial % 2:
                B |= set(list(A)[: min(len(A), 5)])
            res = setint_via_eq(
                A, B, _oracle_eq, 0.01, seed=derive_seed(23, trial),
                universe_bits=u,
            )
            assert res.outcome == "ok"
            assert res.intersection == frozenset(A & B)

    def test_exhaustive_small_composition(self):
        u = 4
        universe = range(1 << u)
        for na, nb in itertools.product(range(1, 4), repeat=2):
            rng = np.random.default_rng(100 * na + nb)
            for trial in range(30):
                A = set(rng.choice(list(universe), size=na, replace=False).tolist())
                B = set(rng.choice(list(universe), size=nb, replace=False).tolist())
                res = setint_via_eq(
                    A, B, _oracle_eq, 0.5,
                    seed=derive_seed(na, nb, trial), universe_bits=u,
                )
                assert res.intersection == frozenset(A & B)

    def test_with_real_inner_protocol(self):
        rng = np.random.default_rng(31)
        for trial in range(60):
            u = 16
            A = _random_set(rng, 16, u)
            B = _random_set(rng, 16, u)
            if trial % 3 == 0:
                B |= set(list(A)[:4])
            res = setint_via_eq(
                A, B, _simple_et_inner(E=40), 2.0 ** -20,
                seed=derive_seed(31, trial), universe_bits=u,
            )
            assert res.outcome == "ok"
            # one-sided: true intersection always recovered, spurious extras
            # are the inner protocol's (tiny) false-positive event
            assert res.intersection == frozenset(A & B)

    def test_identical_sets_full_intersection(self):
        rng = np.random.default_rng(37)
        A = _random_set(rng, 32, 24)
        res = setint_via_eq(A, set(A), _oracle_eq, 0.1, seed=5, universe_bits=24)
        assert res.intersection == frozenset(A)

    def test_empty_inputs(self):
        res = setint_via_eq(set(), {1, 2}, _oracle_eq, 0.1)
        assert res.intersection == frozenset()
        assert res.zeta_bits == 0

    def test_exactly_one_extra_merged_round(self):
        rng = np.random.default_rng(41)
        for trial in range(20):
            u = 16
            A = _random_set(rng, 16, u)
            B = _random_set(rng, 16, u)
            seed = derive_seed(41, trial)
            res = setint_via_eq(
                A, B, _simple_et_inner(E=20, r=3), 2.0 ** -10,
                seed=seed, universe_bits=u,
            )
            inner_rounds = _standalone_inner_rounds(res)
            assert res.ledger.rounds_merged == inner_rounds + 1
            # the bucket-size reply merges into the inner opening round
            msgs = res.transcript.messages
            assert msgs[0].phase_tag == "setint-hash"
            assert msgs[1].phase_tag == "setint-buckets"
            assert msgs[1].direction is msgs[2].direction is Direction.B_TO_A

    def test_bucket_accounting(self):
        rng = np.random.default_rng(43)
        A = _random_set(rng, 24, 20)
        B = _random_set(rng, 24, 20)
        res = setint_via_eq(A, B, _oracle_eq, 0.1, seed=9, universe_bits=20)
        # bucket sizes in unary sum to |B| plus one terminator per slot
        k = max(len(A), len(B))
        assert res.bucket_bits == len(B) + k
        assert res.encoding_bits + res.bucket_bits == res.zeta_bits

    def test_overhead_bit_bound(self):
        rng = np.random.default_rng(47)
        k, u = 64, 32
        zetas = []
        for trial in range(100):
            A = _random_set(rng, k, u)
            B = _random_set(rng, k, u)
            res = setint_via_eq(
                A, B, _oracle_eq, 0.1, seed=derive_seed(47, trial),
                universe_bits=u,
            )
            zetas.append(res.encoding_bits)
        assert sum(zetas) / len(zetas) <= 12 * k + 4 * math.log2(u)


def _standalone_inner_rounds(res):
    """Merged rounds of the inner protocol, replayed from the transcript."""
    inner_msgs = [
        m for m in res.transcript.messages
        if not m.phase_tag.startswith("setint-")
    ]
    rounds = 0
    prev = None
    for m in inner_msgs:
        if m.direction is not prev:
            rounds += 1
            prev = m.direction
    return rounds


class TestEqViaSetInt:
    def test_oracle_setint_gives_exact_mask(self):
        from eqproto.core import make_instance

        def oracle_setint(A, B, transcript, coins):
            return A & B

        rng = np.random.default_rng(53)
        for trial in range(100):
            k = int(rng.integers(1, 20))
            cb = int(rng.integers(1, 12))
            eq = {int(i) for i in rng.integers(0, k, size=k // 2)}
            inst = make_instance(k, cb, eq, seed=derive_seed(53, trial))
            mask = eq_via_setint(inst, oracle_setint)
            assert np.array_equal(mask, inst.equal_mask())

    def test_repeated_values_do_not_collide(self):
        from eqproto.core import Instance

        # same value appears at two positions, equal at only one of them
        inst = Instance(
            k=2,
            coord_bits=4,
            x=np.array([7, 7], dtype=np.uint64),
            y=np.array([7, 3], dtype=np.uint64),
            equal_set=frozenset({0}),
        )
        mask = eq_via_setint(inst, lambda A, B, t, c: A & B)
        assert mask.tolist() == [True, False]

    def test_composed_with_setint_via_eq(self):
        from eqproto.core import make_instance

        def setint(A, B, transcript, coins):
            res = setint_via_eq(
                A, B, _oracle_eq, 0.1,
                transcript=transcript, coins=coins, universe_bits=40,
            )
            return res.intersection

        rng = np.random.default_rng(59)
        for trial in range(40):
            k = int(rng.integers(1, 12))
            eq = {int(i) for i in rng.integers(0, k, size=k // 2)}
            inst = make_instance(k, 8, eq, seed=derive_seed(59, trial))
            mask = eq_via_setint(inst, setint)
            assert np.array_equal(mask, inst.equal_mask())


class TestReduceUniverse:
    def test_intersecting_always_intersects(self):
        rng = np.random.default_rng(61)
        for trial in range(500):
            k = 16
            A = _random_set(rng, k, 48)
            B = _random_set(rng, k, 48)
            B.add(next(iter(A)))
            red = reduce_universe(
                A, B, k, 2.0 ** -8, SharedCoins(derive_seed(61, trial)),
                universe_bits=48,
            )
            assert red.intersects

    def test_disjoint_spurious_rate(self):
        rng = np.random.default_rng(67)
        k, p_err = 8, 2.0 ** -4
        trials, spurious = 4000, 0
        for trial in range(trials):
            A = _random_set(rng, k, 48)
            B = _random_set(rng, 2 * k, 48) - A
            red = reduce_universe(
                A, B, k, p_err, SharedCoins(derive_seed(67, trial)),
                universe_bits=48,
            )
            if red.intersects:
                spurious += 1
        # expected rate <= p_err/2; allow generous CI headroom
        assert spurious / trials <= p_err

    def test_m_formula_and_override(self):
        red = reduce_universe({1}, {2}, 4, 0.25, SharedCoins(0), universe_bits=8)
        assert red.m == math.ceil(4 * 16 / 0.25)
        # degenerate negative control: everything collides in a 1-point range
        forced = reduce_universe(
            {1, 5}, {2, 9}, 2, 0.25, SharedCoins(0), universe_bits=8,
            m_override=1,
        )
        assert forced.m == 1 and forced.intersects

    def test_rejects_bad_p_err(self):
        with pytest.raises(ValueError):
            reduce_universe({1}, {2}, 2, 0.0, SharedCoins(0))
