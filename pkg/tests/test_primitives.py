import itertools

import numpy as np
import pytest

from eqproto.core import Bits, SharedCoins
from eqproto.primitives import (
    PRIMITIVE_POLY,
    GF2m,
    PairwiseHash,
    SyndromeCodec,
    batch_test_bits,
    checksum,
    decode_hamming,
    encode_hamming,
    inner_product_test,
    iterated_exp2,
    log_star,
    pack_bit_rows,
)
from eqproto.primitives import test_bits as ip_test_bits
from oracles import nearest_sequence_oracle


class TestField:
    @pytest.mark.parametrize("m", [1, 2, 3, 4, 8, 13, 16, 20])
    def test_tables_consistent(self, m):
        f = GF2m(m)
        # alpha generates the full multiplicative group
        assert len(set(int(v) for v in f.exp[: f.n])) == f.n

    def test_mul_matches_polynomial_mul(self):
        f = GF2m(4)
        # derived from carry-less multiplication reduced mod x^4+x+1
        def slow_mul(a, b):
            acc = 0
            while b:
                if b & 1:
                    acc ^= a
                a <<= 1
                if a & 0x10:
                    a ^= PRIMITIVE_POLY[4]
                b >>= 1
            return acc

        for a in range(16):
            for b in range(16):
                assert f.mul(a, b) == slow_mul(a, b)

    def test_div_inverts(self):
        f = GF2m(5)
        for a in range(1, 32):
            for b in range(1, 32):
                assert f.mul(f.div(a, b), b) == a


class TestInnerProductTest:
    def test_equal_inputs_agree(self):
        for seed in range(10):
            a, b = SharedCoins(seed), SharedCoins(seed)
            v = Bits.from01("10110")
            assert inner_product_test(v, a) == inner_product_test(v, b)

    def test_exhaustive_half_agreement_l2(self):
        # frozen expected value: for x=01, y=11 exactly 2 of the 4 w agree
        x, y = 0b10, 0b11  # bit 0 first: "01" and "11"
        agree = sum(
            ((x & w).bit_count() & 1) == ((y & w).bit_count() & 1) for w in range(4)
        )
        assert agree == 2

    def test_zero_vector_always_zero(self):
        coins = SharedCoins(3)
        for _ in range(20):
            assert inner_product_test(Bits.from01("000"), coins) == 0

    def test_test_bits_completeness(self):
        a, b = SharedCoins(4), SharedCoins(4)
        v = Bits.from01("110010")
        assert ip_test_bits(v, 100, a) == ip_test_bits(v, 100, b)

    def test_test_bits_zero_count(self):
        assert ip_test_bits(Bits.from01("1"), 0, SharedCoins(0)) == Bits.empty()

    def test_agreement_rate_2_to_minus_b(self):
        # quick version of the Monte Carlo check (full run in acceptance)
        b = 6
        trials = 20000
        coins = SharedCoins(9)
        x = Bits.from01("1011")
        y = Bits.from01("0011")
        hits = 0
        for _ in range(trials):
            save = coins.draw_counter
            tx = ip_test_bits(x, b, coins)
            coins2 = SharedCoins(9)
            coins2.draw_bits(save)
            ty = ip_test_bits(y, b, coins2)
            hits += tx == ty
        rate = hits / trials
        assert abs(rate - 2**-b) < 4 * (2**-b * trials) ** 0.5 / trials

    def test_batch_matches_scalar(self):
        vals = np.array([5, 9, 0, 15], dtype=np.uint64)
        a = SharedCoins(21)
        got = batch_test_bits(vals, 4, 7, a)
        b = SharedCoins(21)
        w = b.draw_words(4 * 7).reshape(4, 7) & np.uint64(0xF)
        for i in range(4):
            for s in range(7):
                expect = (int(vals[i]) & int(w[i, s])).bit_count() & 1
                assert got[i, s] == expect


class TestPackBits:
    def test_pack_with_padding(self):
        bits = np.array([[1, 0, 1, 1, 0], [0, 1, 0, 0, 1]], dtype=np.uint8)
        sym = pack_bit_rows(bits, 3)
        assert sym.tolist() == [[0b101, 0b01], [0b010, 0b10]]


class TestSyndromeCodec:
    def test_d0_empty_payload(self):
        assert encode_hamming(np.arange(5), 5, 3, 0) == Bits.empty()

    def test_size_formula_frozen_examples(self):
        assert SyndromeCodec(8, 4, 2).syndrome_bits == 16  # m = 4
        assert SyndromeCodec(4, 3, 1).syndrome_bits == 6  # m = 3

    def test_size_formula_property(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            K = int(rng.integers(1, 200))
            L = int(rng.integers(1, 17))
            d = int(rng.integers(0, K + 1))
            m = max(L, (K).bit_length())
            if m > 20:
                continue
            assert SyndromeCodec(K, L, d).syndrome_bits == 2 * d * m

    def test_zero_error_roundtrip(self):
        rng = np.random.default_rng(2)
        x = rng.integers(0, 8, size=6)
        payload = encode_hamming(x, 6, 3, 2)
        got, ok = decode_hamming(x, payload, 6, 3, 2)
        assert ok and np.array_equal(got, x)

    def test_exhaustive_single_error_K4_L3(self):
        # every x in a sampled set, every single-symbol corruption
        rng = np.random.default_rng(3)
        for _ in range(8):
            x = rng.integers(0, 8, size=4)
            payload = encode_hamming(x, 4, 3, 1)
            for pos in range(4):
                for delta in range(1, 8):
                    y = x.copy()
                    y[pos] ^= delta
                    got, ok = decode_hamming(y, payload, 4, 3, 1)
                    assert ok and np.array_equal(got, x)

    def test_agrees_with_nearest_sequence_oracle(self):
        rng = np.random.default_rng(4)
        for K, L, d in [(3, 2, 1), (4, 2, 2), (5, 3, 2), (6, 4, 2)]:
            codec = SyndromeCodec(K, L, d)
            for _ in range(4):
                x = rng.integers(0, 1 << L, size=K)
                payload = codec.encode(x)
                nerr = int(rng.integers(0, d + 1))
                y = x.copy()
                for pos in rng.choice(K, size=nerr, replace=False):
                    y[pos] ^= int(rng.integers(1, 1 << L))
                matches = nearest_sequence_oracle(y, payload, K, L, d, codec.encode)
                assert matches == [tuple(int(v) for v in x)]
                got, ok = codec.decode(y, payload)
                assert ok and tuple(got) == matches[0]

    def test_beyond_distance_flag_or_checksum_detectable(self):
        # contract allows a wrong answer at distance > d, but it must be
        # either flagged or catchable by a 32-bit digest
        rng = np.random.default_rng(5)
        coins_seed = 0
        for trial in range(20):
            x = rng.integers(0, 8, size=4)
            payload = encode_hamming(x, 4, 3, 1)
            y = x.copy()
            for pos in rng.choice(4, size=3, replace=False):
                y[pos] ^= int(rng.integers(1, 8))
            got, ok = decode_hamming(y, payload, 4, 3, 1)
            if ok and not np.array_equal(got, x):
                coins_seed += 1
                a = SharedCoins(coins_seed)
                b = SharedCoins(coins_seed)
                pack = lambda arr: Bits(sum(int(v) << (3 * i) for i, v in enumerate(arr)), 12)
                dig_x = checksum(pack(x), 32, a)
                dig_g = checksum(pack(got), 32, b)
                assert dig_x != dig_g

    def test_random_k64_l16_d8(self):
        # smaller version of the acceptance sweep
        rng = np.random.default_rng(6)
        codec = SyndromeCodec(64, 16, 8)
        assert codec.syndrome_bits == 2 * 8 * 16
        for _ in range(50):
            x = rng.integers(0, 1 << 16, size=64)
            payload = codec.encode(x)
            y = x.copy()
            nerr = int(rng.integers(0, 9))
            for pos in rng.choice(64, size=nerr, replace=False):
                y[pos] ^= int(rng.integers(1, 1 << 16))
            got, ok = codec.decode(y, payload)
            assert ok and np.array_equal(got, x)

    def test_rejects_unsupported_width(self):
        with pytest.raises(ValueError):
            SyndromeCodec(4, 30, 1)


class TestChecksum:
    def test_equal_inputs_equal_digests(self):
        a, b = SharedCoins(7), SharedCoins(7)
        v = Bits.from01("1100101011")
        assert checksum(v, 16, a) == checksum(v, 16, b)

    def test_single_bit_degenerates_to_inner_product(self):
        a, b = SharedCoins(8), SharedCoins(8)
        v = Bits.from01("10110")
        assert checksum(v, 1, a).value == inner_product_test(v, b)

    def test_collision_rate(self):
        c_bits = 8
        trials = 30000
        collisions = 0
        for t in range(trials):
            a, b = SharedCoins(t), SharedCoins(t)
            collisions += checksum(Bits(3, 4), c_bits, a) == checksum(Bits(5, 4), c_bits, b)
        rate = collisions / trials
        assert rate <= 2**-c_bits + 4 * (2**-c_bits / trials) ** 0.5


class TestPairwiseHash:
    def test_target_one_always_zero(self):
        h = PairwiseHash(1, 16, SharedCoins(1))
        assert h(12345 & 0xFFFF) == 0

    def test_same_input_same_output(self):
        h = PairwiseHash(64, 20, SharedCoins(2))
        assert h(777) == h(777)

    def test_collision_rate_bound(self):
        target = 1 << 10
        trials = 20000
        collisions = 0
        rng = np.random.default_rng(9)
        for t in range(trials):
            h = PairwiseHash(target, 20, SharedCoins(t))
            u1, u2 = rng.integers(0, 1 << 20, size=2)
            while u2 == u1:
                u2 = rng.integers(0, 1 << 20)
            collisions += h(int(u1)) == h(int(u2))
        # family slack factor 2, plus sampling noise
        rate = collisions / trials
        assert rate <= 2 / target + 4 * (2 / target / trials) ** 0.5


class TestMathHelpers:
    def test_log_star(self):
        assert log_star(1) == 0
        assert log_star(2) == 1
        assert log_star(4) == 2
        assert log_star(16) == 3
        assert log_star(65536) == 4

    def test_iterated_exp2(self):
        assert [iterated_exp2(j) for j in range(4)] == [1, 2, 4, 16]
