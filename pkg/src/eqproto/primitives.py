"""Equality-test primitives and the Hamming-bounded exchange codec.

The codec transmits a K-symbol vector as Reed-Solomon-style syndromes so a
receiver holding a vector within Hamming distance d reconstructs the sender's
vector exactly.  Beyond distance d there is no guarantee: the decoder either
raises its failure flag or returns a wrong vector silently; callers that need
detection add a checksum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy

from .core import Bits, SharedCoins

# Primitive polynomials over GF(2), one per field width (x^m term included).
# m = 1 is the degenerate single-symbol field GF(2).
PRIMITIVE_POLY = {
    1: 0x3,
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x89,
    8: 0x11D,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
    17: 0x20009,
    18: 0x40081,
    19: 0x80027,
    20: 0x100009,
}


class GF2m:
    """Arithmetic in GF(2^m) via log/antilog tables."""

    def __init__(self, m: int):
        if m not in PRIMITIVE_POLY:
            raise ValueError(f"unsupported field width m={m}")
        self.m = m
        self.order = 1 << m
        self.n = self.order - 1  # multiplicative group order
        self.poly = PRIMITIVE_POLY[m]
        exp = np.zeros(2 * self.n, dtype=np.int64)
        log = np.zeros(self.order, dtype=np.int64)
        v = 1
        for i in range(self.n):
            exp[i] = v
            log[v] = i
            v <<= 1
            if v & self.order:
                v ^= self.poly
        exp[self.n : 2 * self.n] = exp[: self.n]
        self.exp = exp
        self.log = log

    def mul(self, a: int, b: int) -> int:
        if a == 0 or b == 0:
            return 0
        return int(self.exp[self.log[a] + self.log[b]])

    def div(self, a: int, b: int) -> int:
        if b == 0:
            raise ZeroDivisionError
        if a == 0:
            return 0
        return int(self.exp[(self.log[a] - self.log[b]) % self.n])

    def inv(self, a: int) -> int:
        return self.div(1, a)

    def pow_alpha(self, e: int) -> int:
        return int(self.exp[e % self.n])

    def mul_vec(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.zeros(np.broadcast(a, b).shape, dtype=np.int64)
        nz = (a != 0) & (b != 0)
        if nz.any():
            la = self.log[np.broadcast_to(a, nz.shape)[nz]]
            lb = self.log[np.broadcast_to(b, nz.shape)[nz]]
            out[nz] = self.exp[la + lb]
        return out

    def poly_eval(self, coeffs: list[int], x: int) -> int:
        """Evaluate sum_j coeffs[j] * x^j (Horner)."""
        acc = 0
        for c in reversed(coeffs):
            acc = self.mul(acc, x) ^ c
        return acc


@lru_cache(maxsize=32)
def get_field(m: int) -> GF2m:
    return GF2m(m)


def _berlekamp_massey(field: GF2m, syndromes: list[int]) -> list[int]:
    """Minimal LFSR (error locator) for a syndrome sequence; coeffs low-first."""
    size = len(syndromes) + 1
    c = [1] + [0] * size
    b = [1] + [0] * size
    L, shift, b_disc = 0, 1, 1
    for n, s_n in enumerate(syndromes):
        d = s_n
        for i in range(1, L + 1):
            d ^= field.mul(c[i], syndromes[n - i])
        if d == 0:
            shift += 1
        elif 2 * L <= n:
            t = c[:]
            coef = field.div(d, b_disc)
            for i in range(len(c) - shift):
                c[i + shift] ^= field.mul(coef, b[i])
            L = n + 1 - L
            b = t
            b_disc = d
            shift = 1
        else:
            coef = field.div(d, b_disc)
            for i in range(len(c) - shift):
                c[i + shift] ^= field.mul(coef, b[i])
            shift += 1
    return c[: L + 1]


@dataclass(frozen=True)
class SyndromeCodec:
    """Fixed-parameter codec for K symbols of L bits, distance bound d."""

    K: int
    L: int
    d: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if not 0 <= self.d <= self.K:
            raise ValueError("d out of range")
        if self.L < 1:
            raise ValueError("L must be positive")
        m = self.m
        if self.d > 0 and m not in PRIMITIVE_POLY:
            raise ValueError(f"symbol width m={m} outside supported table")

    @property
    def m(self) -> int:
        return max(self.L, (self.K).bit_length())  # ceil(log2(K+1))

    @property
    def syndrome_bits(self) -> int:
        return 2 * self.d * self.m

    def _field(self) -> GF2m:
        return get_field(self.m)

    def _syndromes(self, symbols: np.ndarray) -> np.ndarray:
        """S_t = sum_i c_i alpha^(i*t) for t = 1..2d."""
        f = self._field()
        syn = np.zeros(2 * self.d, dtype=np.int64)
        c = np.asarray(symbols, dtype=np.int64)
        nz_idx = np.nonzero(c)[0]
        if len(nz_idx) == 0:
            return syn
        logs = f.log[c[nz_idx]]
        for t in range(1, 2 * self.d + 1):
            e = (logs + nz_idx * t) % f.n
            syn[t - 1] = np.bitwise_xor.reduce(f.exp[e])
        return syn

    def encode(self, symbols: np.ndarray) -> Bits:
        """Syndrome payload of exactly 2*d*m bits (empty when d = 0)."""
        symbols = np.asarray(symbols, dtype=np.int64)
        if len(symbols) != self.K:
            raise ValueError("wrong symbol count")
        if self.d == 0:
            return Bits.empty()
        syn = self._syndromes(symbols)
        v = 0
        for t, s in enumerate(syn):
            v |= int(s) << (t * self.m)
        return Bits(v, self.syndrome_bits)

    def decode(self, received: np.ndarray, syndrome: Bits) -> tuple[np.ndarray, bool]:
        """Recover the sender's vector from the receiver's copy and the payload.

        Returns (vector, ok).  ok=False flags a detected failure; a silently
        wrong vector is possible when the true distance exceeds d.
        """
        received = np.asarray(received, dtype=np.int64)
        if len(received) != self.K:
            raise ValueError("wrong symbol count")
        if self.d == 0:
            return received.copy(), True
        if len(syndrome) != self.syndrome_bits:
            raise ValueError("syndrome length mismatch")
        f = self._field()
        mask = (1 << self.m) - 1
        sent_syn = np.array(
            [(syndrome.value >> (t * self.m)) & mask for t in range(2 * self.d)],
            dtype=np.int64,
        )
        diff = sent_syn ^ self._syndromes(received)
        if not diff.any():
            return received.copy(), True
        loc = _berlekamp_massey(f, [int(s) for s in diff])
        nu = len(loc) - 1
        if nu == 0 or nu > self.d:
            return received.copy(), False
        # Chien search over the K valid positions
        loc_arr = np.asarray(loc, dtype=np.int64)
        pos_all = np.arange(self.K, dtype=np.int64)
        vals = np.zeros(self.K, dtype=np.int64)
        for j, cj in enumerate(loc_arr):
            if cj == 0:
                continue
            # term c_j * alpha^(-i*j) at each position i
            e = (f.log[cj] - pos_all * j) % f.n
            vals ^= f.exp[e].astype(np.int64)
        roots = np.nonzero(vals == 0)[0]
        if len(roots) != nu:
            return received.copy(), False
        # Forney: error magnitudes at the located positions
        omega = [0] * (2 * self.d)
        for a in range(min(len(loc), 2 * self.d)):
            if loc[a] == 0:
                continue
            for b in range(2 * self.d - a):
                if diff[b]:
                    omega[a + b] ^= f.mul(loc[a], int(diff[b]))
        deriv = [loc[j] if j % 2 == 1 else 0 for j in range(1, len(loc))]
        out = received.copy()
        for i in roots:
            xinv = f.pow_alpha(-int(i))
            num = f.poly_eval(omega, xinv)
            den = f.poly_eval(deriv, xinv)
            if den == 0:
                return received.copy(), False
            e_i = f.div(num, den)
            if e_i == 0 or e_i > mask:
                return received.copy(), False
            out[i] ^= e_i
        # confirm the corrected vector matches the transmitted syndromes
        if (self._syndromes(out) != sent_syn).any():
            return received.copy(), False
        return out, True


def encode_hamming(symbols: np.ndarray, K: int, L: int, d: int) -> Bits:
    return SyndromeCodec(K, L, d).encode(symbols)


def decode_hamming(
    received: np.ndarray, syndrome: Bits, K: int, L: int, d: int
) -> tuple[np.ndarray, bool]:
    return SyndromeCodec(K, L, d).decode(received, syndrome)


def inner_product_test(value, coins: SharedCoins, width: int | None = None) -> int:
    """One test bit <value, w> mod 2 over a fresh shared w of the same width."""
    if isinstance(value, Bits):
        v, width = value.value, value.length
    else:
        if width is None:
            raise ValueError("width required for int values")
        v = int(value)
    if width < 1:
        raise ValueError("width must be positive")
    w = coins.draw_int(width)
    return (v & w).bit_count() & 1


def test_bits(value, b: int, coins: SharedCoins, width: int | None = None) -> Bits:
    """b independent inner-product test bits on value."""
    if b < 0:
        raise ValueError("negative test count")
    out = 0
    for s in range(b):
        out |= inner_product_test(value, coins, width) << s
    return Bits(out, b)


_POPCOUNT_CHUNK = 1 << 22


def batch_test_bits(
    values: np.ndarray, width: int, l: int, coins: SharedCoins
) -> np.ndarray:
    """l test bits for each of n values (shared w per test slot per value).

    Returns a uint8 array of shape (n, l).  Chunked so large phases stay
    within memory.
    """
    values = np.asarray(values, dtype=np.uint64)
    n = len(values)
    if n == 0 or l == 0:
        return np.zeros((n, l), dtype=np.uint8)
    mask = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    out = np.empty((n, l), dtype=np.uint8)
    rows_per_chunk = max(1, _POPCOUNT_CHUNK // l)
    for lo in range(0, n, rows_per_chunk):
        hi = min(n, lo + rows_per_chunk)
        w = coins.draw_words((hi - lo) * l).reshape(hi - lo, l) & mask
        out[lo:hi] = np.bitwise_count(w & values[lo:hi, None]).astype(np.uint8) & 1
    return out


def batch_test_bits_pair(
    values_a: np.ndarray,
    values_b: np.ndarray,
    width: int,
    l: int,
    coins: SharedCoins,
) -> tuple[np.ndarray, np.ndarray]:
    """Test bits for two aligned value vectors under the same shared masks.

    This is the two-party view of one phase: both parties consume the same
    coins, so slot (i, s) uses one mask for both values.
    """
    values_a = np.asarray(values_a, dtype=np.uint64)
    values_b = np.asarray(values_b, dtype=np.uint64)
    if values_a.shape != values_b.shape:
        raise ValueError("vector shape mismatch")
    n = len(values_a)
    if n == 0 or l == 0:
        z = np.zeros((n, l), dtype=np.uint8)
        return z, z.copy()
    if n * l <= _POPCOUNT_CHUNK:
        w = coins.draw_words(n * l).reshape(n, l)
        if width < 64:
            w &= np.uint64((1 << width) - 1)
        out_a = np.bitwise_count(w & values_a[:, None]).astype(np.uint8)
        out_a &= 1
        out_b = np.bitwise_count(w & values_b[:, None]).astype(np.uint8)
        out_b &= 1
        return out_a, out_b
    mask = np.uint64((1 << width) - 1) if width < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    out_a = np.empty((n, l), dtype=np.uint8)
    out_b = np.empty((n, l), dtype=np.uint8)
    pair = np.stack([values_a, values_b])
    rows_per_chunk = max(1, _POPCOUNT_CHUNK // l)
    for lo in range(0, n, rows_per_chunk):
        hi = min(n, lo + rows_per_chunk)
        w = coins.draw_words((hi - lo) * l).reshape(hi - lo, l) & mask
        both = np.bitwise_count(w[None, :, :] & pair[:, lo:hi, None]).astype(np.uint8) & 1
        out_a[lo:hi] = both[0]
        out_b[lo:hi] = both[1]
    return out_a, out_b


def pack_bit_rows(bits: np.ndarray, group_bits: int) -> np.ndarray:
    """Pack each row of a (n, l) 0/1 array into ceil(l/group_bits) symbols."""
    n, l = bits.shape
    groups = (l + group_bits - 1) // group_bits
    padded = np.zeros((n, groups * group_bits), dtype=np.int64)
    padded[:, :l] = bits
    weights = (np.int64(1) << np.arange(group_bits, dtype=np.int64))
    return (padded.reshape(n, groups, group_bits) * weights).sum(axis=2)


def rows_to_bits(bits: np.ndarray) -> Bits:
    """Flatten a (n, l) 0/1 array into a Bits, row-major, bit 0 first."""
    flat = np.ascontiguousarray(bits, dtype=np.uint8).reshape(-1)
    packed = np.packbits(flat, bitorder="little")
    return Bits(int.from_bytes(packed.tobytes(), "little"), flat.size)


def symbols_to_bits(symbols: np.ndarray, m: int) -> Bits:
    """Concatenate m-bit symbols into a Bits (symbol 0 in the low bits)."""
    v = 0
    for i, s in enumerate(np.asarray(symbols, dtype=np.int64)):
        v |= int(s) << (i * m)
    return Bits(v, len(symbols) * m)


def checksum(value: Bits, c_bits: int, coins: SharedCoins) -> Bits:
    """c_bits-bit inner-product digest of a bitstring."""
    if c_bits < 1:
        raise ValueError("c_bits must be positive")
    if len(value) == 0:
        return coins.draw_bits(0) + Bits(0, c_bits)
    nwords = (len(value) + 63) // 64
    words = value.to_words(nwords)
    out = 0
    rows_per_chunk = max(1, _POPCOUNT_CHUNK // nwords)
    done = 0
    while done < c_bits:
        take = min(c_bits - done, rows_per_chunk)
        w = coins.draw_word_matrix(take, nwords)
        par = (np.bitwise_count(w & words[None, :]).sum(axis=1) & 1).astype(np.uint8)
        for i, bit in enumerate(par):
            out |= int(bit) << (done + i)
        done += take
    return Bits(out, c_bits)


@lru_cache(maxsize=64)
def _prime_above(n: int) -> int:
    return int(sympy.nextprime(n - 1))


class PairwiseHash:
    """Pairwise-independent hash ((a*u + b) mod p) mod target_size."""

    def __init__(self, target_size: int, universe_bits: int, coins: SharedCoins):
        if target_size < 1:
            raise ValueError("target_size must be positive")
        self.target_size = target_size
        self.universe_bits = universe_bits
        self.p = _prime_above(1 << universe_bits)
        pb = self.p.bit_length()
        self.a = 1 + coins.draw_int(pb) % (self.p - 1)
        self.b = coins.draw_int(pb) % self.p

    def __call__(self, u: int) -> int:
        return ((self.a * int(u) + self.b) % self.p) % self.target_size


def pairwise_universe_hash(
    u: int, target_size: int, coins: SharedCoins, universe_bits: int = 64
) -> int:
    return PairwiseHash(target_size, universe_bits, coins)(u)


def log_star(x: float) -> int:
    """Iterations of log2 until the value drops to <= 1."""
    count = 0
    while x > 1:
        x = math.log2(x)
        count += 1
    return count


def iterated_exp2(j: int) -> int:
    """Tower of 2s of height j: iterated_exp2(0)=1, (1)=2, (2)=4, (3)=16, ..."""
    v = 1
    for _ in range(j):
        v = 2**v
    return v
