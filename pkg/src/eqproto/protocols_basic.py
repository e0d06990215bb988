"""Phase engine and the non-rewinding protocols.

All schedules are ceil-rounded integer sequences computed with exact integer
arithmetic, so cost identities in tests are exact rather than approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from sympy import integer_nthroot

from .core import Bits, Direction, Instance, SharedCoins, Transcript
from .primitives import (
    SyndromeCodec,
    batch_test_bits_pair,
    iterated_exp2,
    pack_bit_rows,
    rows_to_bits,
    symbols_to_bits,
)

MAX_SYMBOL_BITS = 20


def ceil_root_pow(base: int, num: int, den: int) -> int:
    """Smallest integer n with n**den >= base**num, i.e. ceil(base**(num/den))."""
    if num <= 0:
        return 1
    root, exact = integer_nthroot(base**num, den)
    return int(root) if exact else int(root) + 1


def ceil_scaled_power(c: int, base: int, num: int, den: int) -> int:
    """Smallest integer n with n**den * base**(-num) >= c**den,
    i.e. ceil(c * base**(-num/den)) for num >= 0, exact."""
    if num == 0:
        return c
    target = c**den
    pw = base**num
    n = max(1, int(round(c * base ** (-num / den))))
    while n**den * pw < target:
        n += 1
    while n > 1 and (n - 1) ** den * pw >= target:
        n -= 1
    return n


@dataclass(frozen=True)
class PhaseSchedule:
    """Per-phase survivor bounds k_j and tests-per-coordinate l_j."""

    variant: str
    k0: int
    r: int
    E: int
    k_bounds: tuple  # (k_0, k_1, ..., k_r)
    tests: tuple  # (l_1, ..., l_r)

    @classmethod
    def dimension_reduction(cls, k: int, E: int) -> "PhaseSchedule":
        """Shrinking schedule used to reduce a length-k instance to <= E
        candidates; phase count is bounded by the iterated log of k/E."""
        return _dimension_reduction_schedule(k, E)

    @classmethod
    def _dimension_reduction_uncached(cls, k: int, E: int) -> "PhaseSchedule":
        if E < 1 or k < 1:
            raise ValueError("k and E must be positive")
        k_bounds = [k]
        tests = []
        j = 1
        while k_bounds[-1] > E:
            tower_j = iterated_exp2(j + 1)  # 2, 4, 16, 65536, ...
            tower_prev = iterated_exp2(j)
            kj = max(-(-k // (2 ** (j - 1) * tower_j)), E)
            tests.append(3 + tower_prev)
            k_bounds.append(kj)
            j += 1
            if j > 64:
                raise RuntimeError("schedule failed to converge")
        return cls("dimension-reduction", k, len(tests), E, tuple(k_bounds), tuple(tests))

    @classmethod
    def simple(cls, k0: int, r: int, E: int) -> "PhaseSchedule":
        """k_j = ceil(k0^(1-j/r)), l_j = ceil(4E * k0^(j/r-1))."""
        return _simple_schedule(k0, r, E)

    @classmethod
    def exists_equal(cls, k: int, r: int, E: int) -> "PhaseSchedule":
        """l_j = ceil(2E * k^(j/r-1)); survivor bounds are not used."""
        return _exists_equal_schedule(k, r, E)

    @cached_property
    def test_bit_volume(self) -> int:
        """Sum over phases of k_{j-1} * l_j (deterministic schedule identity)."""
        return sum(kb * l for kb, l in zip(self.k_bounds[:-1], self.tests))


@lru_cache(maxsize=4096)
def _simple_schedule(k0: int, r: int, E: int) -> PhaseSchedule:
    if r < 1:
        raise ValueError("r must be >= 1")
    k_bounds = [k0] + [ceil_root_pow(k0, r - j, r) for j in range(1, r + 1)]
    tests = [ceil_scaled_power(4 * E, k0, r - j, r) for j in range(1, r + 1)]
    return PhaseSchedule("simple", k0, r, E, tuple(k_bounds), tuple(tests))


@lru_cache(maxsize=4096)
def _exists_equal_schedule(k: int, r: int, E: int) -> PhaseSchedule:
    if r < 1:
        raise ValueError("r must be >= 1")
    tests = [ceil_scaled_power(2 * E, k, r - j, r) for j in range(1, r + 1)]
    k_bounds = [k] + [ceil_root_pow(k, r - j, r) for j in range(1, r + 1)]
    return PhaseSchedule("exists-equal", k, r, E, tuple(k_bounds), tuple(tests))


@lru_cache(maxsize=4096)
def _dimension_reduction_schedule(k: int, E: int) -> PhaseSchedule:
    return PhaseSchedule._dimension_reduction_uncached(k, E)


@dataclass
class PhaseOutcome:
    active: np.ndarray
    decode_failed: bool
    bits_each_way: int


def _hamming_exchange(
    bits_a: np.ndarray,
    bits_b: np.ndarray,
    d_bound: int,
    transcript: Transcript,
    phase_tag: str,
    lead: Direction,
) -> tuple[np.ndarray, bool]:
    """Exchange two parties' packed test bits under a Hamming-distance bound.

    Returns (per-coordinate agreement mask, decode_failed).  Both directions
    are charged; the two decodes see the same symbol differences, so both
    parties land on the same mask.
    """
    n, l = bits_a.shape
    reply = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
    d = min(d_bound, n)
    group_bits = max(1, min(l, MAX_SYMBOL_BITS))
    m = max(group_bits, n.bit_length())
    raw_cost = n * l
    groups = (l + group_bits - 1) // group_bits
    syndrome_cost = groups * 2 * d * m
    if m > MAX_SYMBOL_BITS or syndrome_cost >= raw_cost:
        # degenerate exchange: raw bits are cheaper than syndromes
        if transcript.wants_payloads:
            transcript.record(lead, phase_tag, rows_to_bits(bits_a))
            transcript.record(reply, phase_tag, rows_to_bits(bits_b))
        else:
            transcript.record_len(lead, phase_tag, raw_cost)
            transcript.record_len(reply, phase_tag, raw_cost)
        agree = (bits_a == bits_b).all(axis=1)
        return agree, False
    sym_a = pack_bit_rows(bits_a, group_bits)
    sym_b = pack_bit_rows(bits_b, group_bits)
    codec = SyndromeCodec(n, m, d)
    agree = np.ones(n, dtype=bool)
    failed = False
    payload_a = Bits.empty()
    payload_b = Bits.empty()
    for g in range(groups):
        enc_a = codec.encode(sym_a[:, g])
        enc_b = codec.encode(sym_b[:, g])
        payload_a = payload_a + enc_a
        payload_b = payload_b + enc_b
        recovered_a, ok = codec.decode(sym_b[:, g], enc_a)
        if not ok:
            failed = True
        else:
            agree &= recovered_a == sym_b[:, g]
    transcript.record(lead, phase_tag, payload_a)
    transcript.record(reply, phase_tag, payload_b)
    if failed:
        return np.zeros(n, dtype=bool), True
    return agree, False


def generic_phase(
    instance: Instance,
    active: np.ndarray,
    l_j: int,
    d_bound: int,
    transcript: Transcript,
    coins: SharedCoins,
    exchange_mode: str = "explicit",
    phase_tag: str = "phase",
    lead: Direction = Direction.A_TO_B,
) -> PhaseOutcome:
    """One test phase: l_j shared tests per active coordinate, then an
    exchange; returns the coordinates whose test bits all agreed."""
    active = np.asarray(active, dtype=np.int64)
    n = len(active)
    if n == 0 or l_j == 0:
        return PhaseOutcome(active.copy(), False, 0)
    bits_a, bits_b = batch_test_bits_pair(
        instance.x[active], instance.y[active], instance.coord_bits, l_j, coins
    )
    before = transcript.total_bits
    if exchange_mode == "explicit":
        reply = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
        if transcript.wants_payloads:
            transcript.record(lead, phase_tag, rows_to_bits(bits_a))
            transcript.record(reply, phase_tag, rows_to_bits(bits_b))
        else:
            transcript.record_len(lead, phase_tag, bits_a.size)
            transcript.record_len(reply, phase_tag, bits_b.size)
        agree = (bits_a == bits_b).all(axis=1)
        failed = False
    elif exchange_mode == "hamming":
        agree, failed = _hamming_exchange(
            bits_a, bits_b, d_bound, transcript, phase_tag, lead
        )
    else:
        raise ValueError(f"unknown exchange mode {exchange_mode!r}")
    each_way = (transcript.total_bits - before) // 2
    return PhaseOutcome(active[agree], failed, each_way)


@dataclass
class ReductionResult:
    active: np.ndarray
    early_yes: bool
    schedule: PhaseSchedule | None
    trace: list = field(default_factory=list)


def dimension_reduce(
    instance: Instance,
    E: int,
    mode: str,
    transcript: Transcript,
    coins: SharedCoins,
) -> ReductionResult:
    """Shrink the active set to at most E candidates (mode "exists" may
    instead halt with an early Yes).  No-op when k <= E."""
    if mode not in ("exists", "testing"):
        raise ValueError("mode must be 'exists' or 'testing'")
    k = instance.k
    active = np.arange(k, dtype=np.int64)
    if k <= E:
        return ReductionResult(active, False, None)
    sched = PhaseSchedule.dimension_reduction(k, E)
    trace = []
    lead = Direction.A_TO_B
    for j in range(1, sched.r + 1):
        out = generic_phase(
            instance,
            active,
            sched.tests[j - 1],
            sched.k_bounds[j - 1],
            transcript,
            coins,
            exchange_mode="hamming",
            phase_tag=f"dimreduce-{j}",
            lead=lead,
        )
        active = out.active
        trace.append((j, len(active), out.bits_each_way, out.decode_failed))
        if mode == "exists" and len(active) > sched.k_bounds[j]:
            return ReductionResult(active, True, sched, trace)
        lead = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
    return ReductionResult(active, False, sched, trace)


@dataclass
class EqualityResult:
    equal_mask: np.ndarray
    schedule: PhaseSchedule
    test_bit_volume: int
    trace: list
    transcript: object

    @property
    def ledger(self):
        return self.transcript.ledger()


def _check_r(r: int, k0: int, divisor: int, strict: bool) -> None:
    if r < 1 or int(r) != r:
        raise ValueError("r must be a positive integer")
    if strict and k0 >= 2 and r > max(1, math.floor(math.log2(k0) / divisor)):
        raise ValueError(f"r={r} outside the analysis domain for k0={k0}")


def simple_equality_testing(
    instance: Instance,
    r: int,
    E: int,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
    seed: int = 0,
    strict_domain: bool = False,
    lead: Direction = Direction.A_TO_B,
) -> EqualityResult:
    """r-phase per-coordinate equality testing under a promise that at most
    min(k, E) coordinates differ.  `lead` selects who speaks first."""
    if E < 1:
        raise ValueError("E must be positive")
    k0 = min(instance.k, E)
    _check_r(r, k0, 2, strict_domain)
    transcript = transcript if transcript is not None else Transcript()
    coins = coins if coins is not None else SharedCoins(seed)
    sched = PhaseSchedule.simple(k0, r, E)
    active = np.arange(instance.k, dtype=np.int64)
    trace = []
    for j in range(1, r + 1):
        out = generic_phase(
            instance,
            active,
            sched.tests[j - 1],
            sched.k_bounds[j - 1],
            transcript,
            coins,
            exchange_mode="hamming",
            phase_tag=f"phase-{j}",
            lead=lead,
        )
        active = out.active
        trace.append((j, len(active), out.bits_each_way, out.decode_failed))
        lead = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
    mask = np.zeros(instance.k, dtype=bool)
    mask[active] = True
    return EqualityResult(
        equal_mask=mask,
        schedule=sched,
        test_bit_volume=sched.test_bit_volume,
        trace=trace,
        transcript=transcript,
    )


@lru_cache(maxsize=4096)
def error_budget_threshold(E: int, k: int) -> int:
    """Smallest E' >= E+2 with C(E'+k-1, k-1) * 2^-E' <= 2^-(E+1), exact."""
    if E < 1 or k < 1:
        raise ValueError("E and k must be positive")

    def ok(ep: int) -> bool:
        return math.comb(ep + k - 1, k - 1) << (E + 1) <= 1 << ep

    lo = E + 2
    if ok(lo):
        return lo
    hi = lo
    while not ok(hi):
        hi *= 2
    # predicate is monotone past the first crossing
    while lo + 1 < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ExistsEqualResult:
    answer: bool
    early: bool
    budget_threshold: int
    budget_spent: int
    schedule: PhaseSchedule
    trace: list
    transcript: object

    @property
    def ledger(self):
        return self.transcript.ledger()


def exists_equal(
    instance: Instance,
    r: int,
    E: int,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
    seed: int = 0,
    strict_domain: bool = False,
    lead: Direction = Direction.A_TO_B,
) -> ExistsEqualResult:
    """One-sided test for the existence of an equal coordinate.

    Answers Yes as soon as the spent test budget reaches the threshold, or
    after r phases iff any coordinate survived.  A planted equality always
    survives, so Yes has zero false-negative probability.
    """
    if E < 1:
        raise ValueError("E must be positive")
    k = instance.k
    _check_r(r, k, 2, strict_domain)
    if strict_domain and E < k:
        raise ValueError("requires E >= k")
    transcript = transcript if transcript is not None else Transcript()
    coins = coins if coins is not None else SharedCoins(seed)
    sched = PhaseSchedule.exists_equal(k, r, E)
    threshold = error_budget_threshold(E, k)
    active = np.arange(k, dtype=np.int64)
    spent = 0
    trace = []
    for j in range(1, r + 1):
        out = generic_phase(
            instance,
            active,
            sched.tests[j - 1],
            0,
            transcript,
            coins,
            exchange_mode="explicit",
            phase_tag=f"phase-{j}",
            lead=lead,
        )
        active = out.active
        spent += sched.tests[j - 1] * len(active)
        trace.append((j, len(active), out.bits_each_way, spent))
        if spent >= threshold:
            return ExistsEqualResult(
                True, True, threshold, spent, sched, trace, transcript
            )
        lead = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
    return ExistsEqualResult(
        len(active) >= 1, False, threshold, spent, sched, trace, transcript
    )
