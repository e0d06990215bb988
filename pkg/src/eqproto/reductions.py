"""Reductions between set intersection and per-coordinate equality testing.

The expensive direction sends a succinctly encoded perfect hash function:
the sender builds a two-level hash that is injective on her set, serializes
it in O(k + log universe_bits) bits, and the receiver buckets his own set
with it.  The resulting per-bucket pairs form an equality-testing instance
whose equal coordinates are exactly the common elements, at a cost of one
extra round plus the encoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from sympy import nextprime

from .core import Bits, Direction, Instance, SharedCoins, Transcript, derive_seed
from .primitives import PairwiseHash

ENCODING_VERSION = 1
_MAX_RETRIES = 100_000


class _BitWriter:
    """Append-only LSB-first bit accumulator."""

    def __init__(self):
        self.value = 0
        self.length = 0

    def write(self, v: int, n: int) -> None:
        if v < 0 or (n and v >> n):
            raise ValueError("value does not fit the field")
        self.value |= v << self.length
        self.length += n

    def write_unary(self, n: int) -> None:
        """n as 0^n followed by a terminating 1."""
        self.length += n
        self.value |= 1 << self.length
        self.length += 1

    def to_bits(self) -> Bits:
        return Bits(self.value, self.length)


class _BitReader:
    def __init__(self, bits: Bits):
        self.bits = bits
        self.pos = 0

    def read(self, n: int) -> int:
        if self.pos + n > len(self.bits):
            raise ValueError("truncated encoding")
        v = (self.bits.value >> self.pos) & ((1 << n) - 1)
        self.pos += n
        return v

    def read_unary(self) -> int:
        n = 0
        while self.read(1) == 0:
            n += 1
        return n


@lru_cache(maxsize=1024)
def _level1_prime(k: int, universe_bits: int) -> int:
    """Smallest prime >= max(2^universe_bits, k^2 * universe_bits)."""
    return int(nextprime(max(1 << universe_bits, k * k * universe_bits) - 1))


@lru_cache(maxsize=1024)
def _intermediate_range(k: int) -> int:
    """Smallest prime >= 4k^2: the collision-sparse intermediate range."""
    return int(nextprime(4 * k * k - 1))


def _pool_size(k: int) -> int:
    return 2 * max(0, math.ceil(math.log2(k))) + 4 if k > 1 else 4


_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def _splitmix64(state: np.ndarray) -> np.ndarray:
    """Vectorized 64-bit finalizer: cheap deterministic stream expansion."""
    z = state.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def _derive_pool(pool_seed: int, k: int) -> list[tuple[int, int]]:
    """The shared pool of pairwise-independent bucket resolvers."""
    r1 = _intermediate_range(k)
    m = _pool_size(k)
    base = derive_seed(pool_seed, 0x504F4F4C)
    with np.errstate(over="ignore"):
        states = np.uint64(base) + np.arange(1, 2 * m + 1, dtype=np.uint64) * np.uint64(
            _SPLITMIX_GAMMA
        )
        words = _splitmix64(states)
    return [
        (1 + int(words[2 * i]) % (r1 - 1), int(words[2 * i + 1]) % r1)
        for i in range(m)
    ]


@dataclass(frozen=True)
class PerfectHashEncoding:
    """Succinct two-level hash, injective on the set it was built for.

    Level 1 compresses the universe into a quadratic-size range without
    collisions on the set; a splitter partitions that range into k buckets
    with few collisions; each bucket of size n picks the first pool function
    injective modulo n^2; a used-slot bitmap of fixed length 4k turns slot
    ranks into the final range [k].
    """

    k: int
    universe_bits: int
    mult: int  # level-1 multiplier
    split_c: int
    split_d: int
    pool_seed: int
    bucket_sizes: tuple
    bucket_fn: tuple  # pool index (1-based) per bucket; 0 where unused
    used_bitmap: Bits  # fixed 4k bits

    @cached_property
    def _pool(self) -> list[tuple[int, int]]:
        return _derive_pool(self.pool_seed, self.k)

    @cached_property
    def _bases(self) -> tuple:
        bases = [0]
        for n in self.bucket_sizes:
            bases.append(bases[-1] + n * n)
        return tuple(bases)

    @cached_property
    def _rank(self) -> np.ndarray:
        """Exclusive popcount prefix of the used-slot bitmap."""
        nbits = 4 * self.k
        raw = np.frombuffer(
            self.used_bitmap.value.to_bytes((nbits + 7) // 8, "little"),
            dtype=np.uint8,
        )
        bits = np.unpackbits(raw, bitorder="little")[:nbits]
        ranks = np.zeros(nbits, dtype=np.int64)
        np.cumsum(bits[:-1], out=ranks[1:])
        return ranks

    @property
    def total_bits(self) -> int:
        return len(self.to_bits())

    def _level1(self, u: int) -> int:
        p = _level1_prime(self.k, self.universe_bits)
        return (self.mult * int(u) % p) % _intermediate_range(self.k)

    def _bucket(self, v: int) -> int:
        r1 = _intermediate_range(self.k)
        return ((self.split_c * v + self.split_d) % r1) % self.k

    @cached_property
    def _params(self) -> tuple:
        return (
            _level1_prime(self.k, self.universe_bits),
            _intermediate_range(self.k),
        )

    def evaluate(self, u: int) -> int:
        """Slot in [k]; pairwise distinct on the build set."""
        p, r1 = self._params
        v = (self.mult * int(u) % p) % r1
        j = ((self.split_c * v + self.split_d) % r1) % self.k
        n = self.bucket_sizes[j]
        idx = self._bases[j]
        if n > 1:
            c, d = self._pool[self.bucket_fn[j] - 1]
            idx += ((c * v + d) % r1) % (n * n)
        return min(int(self._rank[idx]), self.k - 1)

    @cached_property
    def _vec_tables(self):
        """Numpy lookup tables for batch evaluation (narrow-word regime)."""
        sizes = np.array(self.bucket_sizes, dtype=np.uint64)
        bases = np.array(self._bases[:-1], dtype=np.uint64)
        fn = np.array(self.bucket_fn, dtype=np.int64)
        pool = self._pool
        pc = np.array([c for c, _ in pool], dtype=np.uint64)
        pd = np.array([d for _, d in pool], dtype=np.uint64)
        # per-bucket resolver coefficients (identity for size <= 1 buckets)
        has_fn = fn > 0
        bc = np.where(has_fn, pc[np.maximum(fn - 1, 0)], np.uint64(0))
        bd = np.where(has_fn, pd[np.maximum(fn - 1, 0)], np.uint64(0))
        return sizes, bases, bc, bd

    def evaluate_many(self, values: np.ndarray) -> np.ndarray:
        """Vectorized evaluate; falls back to scalars for wide universes."""
        values = np.asarray(values, dtype=np.uint64)
        p = _level1_prime(self.k, self.universe_bits)
        r1 = _intermediate_range(self.k)
        wide = (
            p.bit_length() + self.universe_bits > 63 or 2 * r1.bit_length() > 63
        )
        if wide or values.size < 64:
            # scalar path: numpy wins only on larger batches
            return np.array([self.evaluate(int(u)) for u in values], dtype=np.int64)
        sizes, bases, bc, bd = self._vec_tables
        v = (np.uint64(self.mult) * values % np.uint64(p)) % np.uint64(r1)
        j = (np.uint64(self.split_c) * v + np.uint64(self.split_d)) % np.uint64(
            r1
        ) % np.uint64(self.k)
        n = sizes[j]
        idx = bases[j]
        multi = n > 1
        if multi.any():
            vm, jm = v[multi], j[multi]
            nm = n[multi]
            idx = idx.copy()
            idx[multi] += (bc[jm] * vm + bd[jm]) % np.uint64(r1) % (nm * nm)
        ranks = self._rank[idx.astype(np.int64)]
        return np.minimum(ranks, self.k - 1)

    def to_bits(self) -> Bits:
        w = _BitWriter()
        w.write(ENCODING_VERSION, 16)
        w.write(self.universe_bits, 8)
        w.write(self.k, 32)
        w.write(self.mult, _level1_prime(self.k, self.universe_bits).bit_length())
        r1_bits = _intermediate_range(self.k).bit_length()
        w.write(self.split_c, r1_bits)
        w.write(self.split_d, r1_bits)
        w.write(self.pool_seed, 64)
        for n in self.bucket_sizes:
            w.write((1 << n) - 1, n)  # |A_j| in unary: n ones ...
            w.write(0, 1)  # ... and a terminating zero
        for j, n in enumerate(self.bucket_sizes):
            if n > 1:
                w.write_unary(self.bucket_fn[j] - 1)
        w.write(self.used_bitmap.value, len(self.used_bitmap))
        return w.to_bits()

    @classmethod
    def from_bits(cls, bits: Bits) -> "PerfectHashEncoding":
        rd = _BitReader(bits)
        version = rd.read(16)
        if version != ENCODING_VERSION:
            raise ValueError(f"unsupported encoding version {version}")
        universe_bits = rd.read(8)
        k = rd.read(32)
        mult = rd.read(_level1_prime(k, universe_bits).bit_length())
        r1_bits = _intermediate_range(k).bit_length()
        split_c = rd.read(r1_bits)
        split_d = rd.read(r1_bits)
        pool_seed = rd.read(64)
        sizes = []
        for _ in range(k):
            n = 0
            while rd.read(1) == 1:
                n += 1
            sizes.append(n)
        fn = [0] * k
        for j, n in enumerate(sizes):
            if n > 1:
                fn[j] = rd.read_unary() + 1
        bitmap = Bits(rd.read(4 * k), 4 * k)
        return cls(
            k,
            universe_bits,
            mult,
            split_c,
            split_d,
            pool_seed,
            tuple(sizes),
            tuple(fn),
            bitmap,
        )


def build_perfect_hash(
    A, universe_bits: int, coins: SharedCoins
) -> PerfectHashEncoding:
    """Two-level hash injective on A, retried with fresh coins per level."""
    elems = sorted(int(u) for u in A)
    k = len(elems)
    if k < 1:
        raise ValueError("A must be non-empty")
    if any(u < 0 or u >> universe_bits for u in elems):
        raise ValueError("element outside the universe")
    p = _level1_prime(k, universe_bits)
    r1 = _intermediate_range(k)
    p_bits, r1_bits = p.bit_length(), r1.bit_length()
    narrow = p_bits + universe_bits <= 63 and 2 * r1_bits <= 63
    elems_np = np.array(elems, dtype=np.uint64) if narrow else None

    for _ in range(_MAX_RETRIES):
        mult = 1 + coins.draw_int(p_bits) % (p - 1)
        if narrow:
            lvl = (np.uint64(mult) * elems_np % np.uint64(p)) % np.uint64(r1)
            if np.unique(lvl).size == k:
                level1 = [int(v) for v in lvl]
                break
        else:
            level1 = [(mult * u % p) % r1 for u in elems]
            if len(set(level1)) == k:
                break
    else:  # pragma: no cover - probability ~2^-MAX_RETRIES
        raise RuntimeError("level-1 construction failed to converge")

    lvl_np = np.array(level1, dtype=np.uint64) if narrow else None
    for _ in range(_MAX_RETRIES):
        split_c = 1 + coins.draw_int(r1_bits) % (r1 - 1)
        split_d = coins.draw_int(r1_bits) % r1
        if narrow:
            bk = (np.uint64(split_c) * lvl_np + np.uint64(split_d)) % np.uint64(
                r1
            ) % np.uint64(k)
            counts = np.bincount(bk.astype(np.int64), minlength=k)
            if (
                int((counts * (counts - 1)).sum()) // 2 < k
                and int((counts * counts).sum()) <= 4 * k
            ):
                buckets = [[] for _ in range(k)]
                for v, j in zip(level1, bk):
                    buckets[int(j)].append(v)
                break
        else:
            buckets = [[] for _ in range(k)]
            for v in level1:
                buckets[((split_c * v + split_d) % r1) % k].append(v)
            collisions = sum(n * (n - 1) // 2 for n in (len(b) for b in buckets))
            if collisions < k and sum(len(b) ** 2 for b in buckets) <= 4 * k:
                break
    else:  # pragma: no cover
        raise RuntimeError("bucket splitter failed to converge")

    sizes = tuple(len(b) for b in buckets)
    for _ in range(_MAX_RETRIES):
        pool_seed = coins.draw_int(64)
        pool = _derive_pool(pool_seed, k)
        fn = [0] * k
        ok = True
        for j, bucket in enumerate(buckets):
            n = len(bucket)
            if n < 2:
                continue
            for i, (c, d) in enumerate(pool, start=1):
                local = {((c * v + d) % r1) % (n * n) for v in bucket}
                if len(local) == n:
                    fn[j] = i
                    break
            else:
                ok = False
                break
        if ok:
            break
    else:  # pragma: no cover
        raise RuntimeError("bucket resolver pool failed to converge")

    bitmap = 0
    base = 0
    for j, bucket in enumerate(buckets):
        n = len(bucket)
        if n == 1:
            bitmap |= 1 << base
        elif n > 1:
            c, d = pool[fn[j] - 1]
            for v in bucket:
                bitmap |= 1 << (base + ((c * v + d) % r1) % (n * n))
        base += n * n
    enc = PerfectHashEncoding(
        k,
        universe_bits,
        mult,
        split_c,
        split_d,
        pool_seed,
        sizes,
        tuple(fn),
        Bits(bitmap, 4 * k),
    )
    enc.__dict__["_pool"] = pool  # the builder already derived it
    return enc


def eval_perfect_hash(encoding: PerfectHashEncoding, u: int) -> int:
    return encoding.evaluate(u)


@dataclass
class SetIntResult:
    """Intersection plus exact accounting of the reduction overhead."""

    intersection: frozenset | None  # None when the inner protocol gave up
    outcome: str  # "ok" | inner protocol's failure outcome
    encoding_bits: int
    bucket_bits: int
    inner_result: object
    transcript: object

    @property
    def zeta_bits(self) -> int:
        """Bits spent outside the inner equality protocol."""
        return self.encoding_bits + self.bucket_bits

    @property
    def ledger(self):
        return self.transcript.ledger()


def setint_via_eq(
    A,
    B,
    eq_protocol,
    p_err: float,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
    seed: int = 0,
    universe_bits: int | None = None,
    private_coins: SharedCoins | None = None,
) -> SetIntResult:
    """Intersect two sets through any per-coordinate equality protocol.

    The first party hashes her set perfectly into [k] and sends the
    encoding; the second buckets his set and replies with the bucket sizes
    (unary, <= 2k bits).  Both then test the pairs (bucket owner, bucket
    member) for equality, with the second party speaking first so the size
    message merges into the protocol's opening round: the reduction costs
    exactly one extra merged round.  `eq_protocol` is called as
    eq_protocol(instance, transcript, coins, lead) and must return a result
    with an equal_mask; errors of the inner protocol propagate to the
    intersection with probability <= p_err (the caller sizes the inner
    protocol accordingly).
    """
    if not 0 < p_err < 1:
        raise ValueError("p_err must be in (0, 1)")
    set_a = sorted(int(u) for u in A)
    set_b = sorted(int(u) for u in B)
    if not set_a or not set_b:
        t = transcript if transcript is not None else Transcript()
        return SetIntResult(frozenset(), "ok", 0, 0, None, t)
    transcript = transcript if transcript is not None else Transcript()
    coins = coins if coins is not None else SharedCoins(seed)
    if universe_bits is None:
        universe_bits = max(1, max(set_a + set_b).bit_length())
    k = max(len(set_a), len(set_b))

    # padding keeps the hash range at k even when |A| < k
    padded = list(set_a)
    filler = 0
    while len(padded) < k:
        while filler in set(padded):
            filler += 1
        padded.append(filler)
        filler += 1
    private = (
        private_coins
        if private_coins is not None
        else SharedCoins(derive_seed(coins.seed, 0x50484153, seed))
    )
    enc = build_perfect_hash(padded, universe_bits, private)
    enc_bits = enc.to_bits()
    transcript.record(Direction.A_TO_B, "setint-hash", enc_bits)

    slots_b: list[list[int]] = [[] for _ in range(k)]
    for u, s in zip(set_b, enc.evaluate_many(np.array(set_b, dtype=np.uint64))):
        slots_b[int(s)].append(u)
    wsizes = _BitWriter()
    for bucket in slots_b:
        wsizes.write((1 << len(bucket)) - 1, len(bucket))
        wsizes.write(0, 1)
    size_bits = wsizes.to_bits()
    transcript.record(Direction.B_TO_A, "setint-buckets", size_bits)

    slot_of_a = {
        int(s): u
        for s, u in zip(enc.evaluate_many(np.array(set_a, dtype=np.uint64)), set_a)
    }
    xs, ys, owners = [], [], []
    for j, bucket in enumerate(slots_b):
        a_val = slot_of_a.get(j)
        for b_val in bucket:
            # 0 marks an unowned slot; occupied values are shifted by one
            xs.append(0 if a_val is None else a_val + 1)
            ys.append(b_val + 1)
            owners.append(b_val)
    inst = Instance(
        k=len(xs),
        coord_bits=universe_bits + 1,
        x=np.array(xs, dtype=np.uint64),
        y=np.array(ys, dtype=np.uint64),
    )
    inner = eq_protocol(inst, transcript, coins, Direction.B_TO_A)
    mask = inner.equal_mask
    if mask is None:
        return SetIntResult(
            None, getattr(inner, "outcome", "failed"),
            len(enc_bits), len(size_bits), inner, transcript,
        )
    inter = frozenset(owners[i] for i in np.nonzero(mask)[0])
    return SetIntResult(
        inter, "ok", len(enc_bits), len(size_bits), inner, transcript
    )


def eq_via_setint(
    instance: Instance,
    setint_protocol,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
) -> np.ndarray:
    """Per-coordinate verdicts through any set-intersection protocol.

    Coordinates are tagged with their index so equal values at different
    positions cannot collide; zero communication beyond the inner protocol.
    """
    transcript = transcript if transcript is not None else Transcript()
    k = instance.k
    tag_shift = instance.coord_bits
    A = {(i << tag_shift) | int(instance.x[i]) for i in range(k)}
    B = {(i << tag_shift) | int(instance.y[i]) for i in range(k)}
    inter = setint_protocol(A, B, transcript, coins)
    mask = np.zeros(k, dtype=bool)
    for i in range(k):
        mask[i] = ((i << tag_shift) | int(instance.x[i])) in inter
    return mask


@dataclass(frozen=True)
class UniverseReduction:
    hashed_a: frozenset
    hashed_b: frozenset
    m: int  # reduced universe size

    @property
    def intersects(self) -> bool:
        return bool(self.hashed_a & self.hashed_b)


def reduce_universe(
    A,
    B,
    k: int,
    p_err: float,
    coins: SharedCoins,
    universe_bits: int = 64,
    m_override: int | None = None,
) -> UniverseReduction:
    """Map both sets through one shared pairwise hash into [m], m=ceil(4k^2/p_err).

    Intersecting inputs stay intersecting; disjoint inputs spuriously collide
    with probability <= k^2/m <= p_err/2 by a union bound over pairs.
    m_override exists for degenerate negative controls (e.g. m=1).
    """
    if m_override is None and not 0 < p_err < 1:
        raise ValueError("p_err must be in (0, 1)")
    m = m_override if m_override is not None else math.ceil(4 * k * k / p_err)
    h = PairwiseHash(m, universe_bits, coins)
    return UniverseReduction(
        frozenset(h(u) for u in A), frozenset(h(u) for u in B), m
    )
