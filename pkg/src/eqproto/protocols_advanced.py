"""Rewinding and adaptive equality-testing protocols.

The rewinding protocol runs a refutation stage (phases 1..r) followed by a
verification stage (phases r..1).  Every phase ends with a shared-randomness
digest of the full test-bit history, so an undetected transmission error in
one phase is caught by a later check with overwhelming probability; the
protocol then rewinds and re-runs the affected phases with fresh coins,
charging a running error meter.  Fault injection is a first-class input
because the rewind branches are otherwise essentially unreachable.

The adaptive protocol sends one message per round.  From round two on, the
sender transmits log2(r) parallel encodings of fresh test-bit batches at
geometrically growing rates, each carrying its own digest; the receiver
learns from the largest decodable prefix how much of the error budget the
adversary has already burned, and tightens the next round's parameters
accordingly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .core import Bits, Direction, Instance, SharedCoins, Transcript, derive_seed
from .primitives import (
    SyndromeCodec,
    batch_test_bits_pair,
    checksum,
    pack_bit_rows,
    rows_to_bits,
)
from .protocols_basic import (
    MAX_SYMBOL_BITS,
    ceil_root_pow,
    ceil_scaled_power,
    _check_r,
)

_SIDES = ("A", "B")


def _ceil_div_2root(num: int, k0: int, r: int) -> int:
    """ceil(num / (2 * k0**(1/r))) with exact integer arithmetic."""
    if num <= 0:
        return 0
    target = num**r
    n = max(1, int(round(num / (2 * k0 ** (1 / r)))))
    while (2 * n) ** r * k0 < target:
        n += 1
    while n > 1 and (2 * (n - 1)) ** r * k0 >= target:
        n -= 1
    return n


def _ceil_root_shifted(k0: int, num: int, r: int, shift: int) -> int:
    """ceil(k0**(num/r) / 2**shift) with exact integer arithmetic."""
    if num <= 0:
        return 1
    target = k0**num
    n = max(1, int(round(k0 ** (num / r) / 2**shift)))
    while (n << shift) ** r < target:
        n += 1
    while n > 1 and ((n - 1) << shift) ** r >= target:
        n -= 1
    return n


@dataclass(frozen=True)
class RewindSchedule:
    """Phase budgets B_j, survivor bounds k_j and test counts l_j."""

    k0: int
    r: int
    E: int
    c: int
    budget: int  # E' = c * E
    B: tuple
    k_bounds: tuple  # (k_0, ..., k_r)
    tests: tuple  # (l_1, ..., l_r)

    @classmethod
    def build(cls, k0: int, r: int, E: int, c: int = 2) -> "RewindSchedule":
        return _build_rewind_schedule(k0, r, E, c)

    def refute_fail_increment(self, j: int) -> int:
        """Meter charge for a failed history check at refutation phase j.

        A failure at phase 1 is charged as if at phase 2 (the schedule has
        no budget before phase 1); the run restarts phase 1.
        """
        prev = self.B[j - 2] if j >= 2 else self.B[0]
        return _ceil_div_2root(prev, self.k0, self.r)

    def verify_fail_increment(self, j: int) -> int:
        """Meter charge for a failed check at verification phase j."""
        return _ceil_div_2root(self.B[self.r - 1], self.k0, self.r) + sum(
            self.B[j:]
        )


@lru_cache(maxsize=4096)
def _build_rewind_schedule(k0: int, r: int, E: int, c: int) -> RewindSchedule:
    if k0 < 1 or E < 1 or r < 1 or c < 1:
        raise ValueError("k0, r, E, c must be positive")
    root = ceil_root_pow(E**r * k0, 1, r)  # ceil(E * k0**(1/r))
    B = tuple(-(-root // min(j * j, r)) for j in range(1, r + 1))
    k_bounds = tuple(ceil_root_pow(k0, r - j, r) for j in range(r + 1))
    tests = tuple(-(-B[j - 1] // k_bounds[j - 1]) for j in range(1, r + 1))
    return RewindSchedule(k0, r, E, c, c * E, B, k_bounds, tests)


@dataclass
class ErrorMeter:
    """Running estimate of how much detected-error probability was spent."""

    budget: int
    value: int = 0
    increments: list = field(default_factory=list)

    def add(self, stage: str, phase: int, amount: int, cause: str) -> bool:
        """Charge the meter; returns True when the budget is exhausted."""
        self.value += amount
        self.increments.append((stage, phase, amount, cause))
        return self.value >= self.budget


@dataclass(frozen=True)
class Fault:
    """One injected corruption, addressed by protocol position.

    segment "peer_view" flips stored received test bits after the phase's
    own check (modelling an undetected transmission error), "check" corrupts
    a digest in flight (forcing a spurious failure), and "post" flips one
    party's locally generated confirmation bits.  `flip` is an integer XOR
    mask over the segment's bits, bit 0 first, row-major.
    """

    stage: str  # "refute" | "verify"
    phase: int
    segment: str  # "peer_view" | "check" | "post"
    occurrence: int = 1  # fires on the nth execution of (stage, phase)
    side: str = "A"  # whose stored copy is corrupted
    flip: int = 1

    def __post_init__(self):
        if self.stage not in ("refute", "verify"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.segment not in ("peer_view", "check", "post"):
            raise ValueError(f"unknown segment {self.segment!r}")
        if self.side not in _SIDES:
            raise ValueError(f"unknown side {self.side!r}")
        if self.occurrence < 1 or self.flip < 1:
            raise ValueError("occurrence and flip must be positive")


class FaultPlan:
    """A set of injected faults, addressable by (stage, phase, occurrence)."""

    def __init__(self, faults=()):
        self.faults = list(faults)

    def for_event(self, stage: str, phase: int, occurrence: int, segment: str):
        if not self.faults:
            return []
        return [
            f
            for f in self.faults
            if f.stage == stage
            and f.phase == phase
            and f.occurrence == occurrence
            and f.segment == segment
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "faults": [
                    {
                        "stage": f.stage,
                        "phase": f.phase,
                        "segment": f.segment,
                        "occurrence": f.occurrence,
                        "side": f.side,
                        "flip": format(f.flip, "x"),
                    }
                    for f in self.faults
                ]
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, s: str) -> "FaultPlan":
        data = json.loads(s)
        return cls(
            Fault(
                stage=f["stage"],
                phase=f["phase"],
                segment=f["segment"],
                occurrence=f.get("occurrence", 1),
                side=f.get("side", "A"),
                flip=int(f["flip"], 16),
            )
            for f in data["faults"]
        )

    def __len__(self) -> int:
        return len(self.faults)


_EMPTY_PLAN = FaultPlan()


def _pack_words(vec: np.ndarray) -> np.ndarray:
    """Pack a flat 0/1 array into little-endian uint64 words."""
    packed = np.packbits(vec, bitorder="little")
    pad = (-len(packed)) % 8
    if pad:
        packed = np.concatenate([packed, np.zeros(pad, dtype=np.uint8)])
    return packed.view(np.uint64)


def _pack_rows_int(rows: np.ndarray) -> tuple[int, int]:
    """Pack a 0/1 array into (integer, bit length), row-major, bit 0 first."""
    if rows.size == 0:
        return 0, 0
    packed = np.packbits(rows.reshape(-1), bitorder="little")
    return int.from_bytes(packed.tobytes(), "little"), rows.size


def _twin_digest_ints(
    ha: int, na: int, hb: int, nb: int, c_bits: int, coins: SharedCoins
) -> tuple[Bits, Bits]:
    """Inner-product digests of two packed bit vectors under the same shared
    masks (one coin draw serves both parties)."""
    if na != nb:
        # diverged histories announce their lengths; a mismatch is definitive
        return Bits(0, c_bits), Bits(1, c_bits)
    if na == 0:
        return Bits(0, c_bits), Bits(0, c_bits)
    nw = (na + 63) // 64
    masks = coins.draw_word_matrix(c_bits, nw)
    if ha == hb:
        # identical histories digest identically under shared masks
        own = np.frombuffer(ha.to_bytes(nw * 8, "little"), dtype="<u8")
        parity = np.bitwise_count(masks & own).sum(axis=1).astype(np.uint8)
        parity &= 1
        da = int.from_bytes(np.packbits(parity, bitorder="little").tobytes(), "little")
        d = Bits(da, c_bits)
        return d, d
    pair = np.frombuffer(
        ha.to_bytes(nw * 8, "little") + hb.to_bytes(nw * 8, "little"), dtype="<u8"
    ).reshape(2, 1, nw)
    parity = np.bitwise_count(masks[None, :, :] & pair).sum(axis=2).astype(np.uint8)
    parity &= 1
    packed = np.packbits(parity, axis=1, bitorder="little")
    da = int.from_bytes(packed[0].tobytes(), "little")
    db = int.from_bytes(packed[1].tobytes(), "little")
    return Bits(da, c_bits), Bits(db, c_bits)


def _paired_phase_bits(
    instance: Instance,
    l: int,
    act_a: np.ndarray,
    act_b: np.ndarray,
    coins: SharedCoins,
) -> tuple[np.ndarray, np.ndarray]:
    """l test bits per active coordinate for both parties under shared masks.

    Masks are drawn for every coordinate so the parties stay coin-aligned
    even when their active sets have diverged; each side only evaluates the
    rows it still tracks.
    """
    k = instance.k
    w = coins.draw_words(k * l).reshape(k, l)
    if instance.coord_bits < 64:
        w &= np.uint64((1 << instance.coord_bits) - 1)

    def one_side(values: np.ndarray, act: np.ndarray) -> np.ndarray:
        if act.size == 0:
            return np.zeros((0, l), dtype=np.uint8)
        if act.size == k:
            out = np.bitwise_count(w & values[:, None]).astype(np.uint8)
        else:
            out = np.bitwise_count(w[act] & values[act, None]).astype(np.uint8)
        out &= 1
        return out

    return one_side(instance.x, act_a), one_side(instance.y, act_b)


def _apply_flip(rows: np.ndarray, flip: int) -> None:
    """XOR an integer bit mask onto a 0/1 array, bit 0 first, row-major."""
    flat = rows.reshape(-1)
    i = 0
    while flip and i < flat.size:
        if flip & 1:
            flat[i] ^= 1
        flip >>= 1
        i += 1


def _unpack_rows(symbols: np.ndarray, group_bits: int, l: int) -> np.ndarray:
    """Inverse of pack_bit_rows: (n, groups) symbols back to (n, l) bits."""
    n, groups = symbols.shape
    shifts = np.arange(group_bits, dtype=np.int64)
    bits = ((symbols[:, :, None] >> shifts) & 1).astype(np.uint8)
    return bits.reshape(n, groups * group_bits)[:, :l]


def _exchange_views(
    bits_a: np.ndarray,
    bits_b: np.ndarray,
    d_bound: int,
    transcript: Transcript,
    phase_tag: str,
    lead: Direction,
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Bidirectional bounded-distance exchange returning each side's decoded
    view of the other's test bits: (a_view_of_b, b_view_of_a, detected_fail)."""
    reply = Direction.B_TO_A if lead is Direction.A_TO_B else Direction.A_TO_B
    n_a, l = bits_a.shape
    n_b = bits_b.shape[0]
    if n_a != n_b:
        # the parties' active sets have diverged; nothing decodes sensibly
        if transcript.wants_payloads:
            transcript.record(lead, phase_tag, rows_to_bits(bits_a))
            transcript.record(reply, phase_tag, rows_to_bits(bits_b))
        else:
            transcript.record_len(lead, phase_tag, bits_a.size)
            transcript.record_len(reply, phase_tag, bits_b.size)
        return np.zeros_like(bits_a), np.zeros_like(bits_b), True
    n = n_a
    if n == 0 or l == 0:
        return bits_b.copy(), bits_a.copy(), False
    d = min(d_bound, n)
    group_bits = max(1, min(l, MAX_SYMBOL_BITS))
    m = max(group_bits, n.bit_length())
    groups = (l + group_bits - 1) // group_bits
    if m > MAX_SYMBOL_BITS or groups * 2 * d * m >= n * l:
        if transcript.wants_payloads:
            transcript.record(lead, phase_tag, rows_to_bits(bits_a))
            transcript.record(reply, phase_tag, rows_to_bits(bits_b))
        else:
            transcript.record_len(lead, phase_tag, n * l)
            transcript.record_len(reply, phase_tag, n * l)
        return bits_b.copy(), bits_a.copy(), False
    sym_a = pack_bit_rows(bits_a, group_bits)
    sym_b = pack_bit_rows(bits_b, group_bits)
    codec = SyndromeCodec(n, m, d)
    view_at_a = np.empty_like(sym_b)
    view_at_b = np.empty_like(sym_a)
    failed = False
    payload_a = Bits.empty()
    payload_b = Bits.empty()
    for g in range(groups):
        enc_a = codec.encode(sym_a[:, g])
        enc_b = codec.encode(sym_b[:, g])
        payload_a = payload_a + enc_a
        payload_b = payload_b + enc_b
        got_b, ok_a = codec.decode(sym_a[:, g], enc_b)
        got_a, ok_b = codec.decode(sym_b[:, g], enc_a)
        view_at_a[:, g] = got_b
        view_at_b[:, g] = got_a
        failed |= not (ok_a and ok_b)
    transcript.record(lead, phase_tag, payload_a)
    transcript.record(reply, phase_tag, payload_b)
    return (
        _unpack_rows(view_at_a, group_bits, l),
        _unpack_rows(view_at_b, group_bits, l),
        failed,
    )


class PhaseRecord(NamedTuple):
    stage: str
    phase: int
    occurrence: int
    passed: bool
    survivors_a: int
    survivors_b: int
    meter_before: int
    meter_after: int
    checked_bits: int
    rewound_to: int | None


@dataclass
class RewindResult:
    outcome: str  # "ok" | "budget_exhausted"
    equal_mask: np.ndarray | None  # first party's verdict
    equal_mask_b: np.ndarray | None
    schedule: RewindSchedule
    meter: ErrorMeter
    phases_executed: int
    trace: list
    transcript: object

    @property
    def ledger(self):
        return self.transcript.ledger()


class _RewindRun:
    """Mutable two-party state for one rewinding run."""

    def __init__(self, instance, sched, fault_plan, transcript, coins):
        self.inst = instance
        self.sched = sched
        self.plan = fault_plan
        self.transcript = transcript
        self.coins = coins
        self.meter = ErrorMeter(budget=sched.budget)
        self.trace: list[PhaseRecord] = []
        self.phases = 0
        self.exec_counts: dict = {}
        all_idx = np.arange(instance.k, dtype=np.int64)
        # I[side][j]: active set after phase j (index 0 = everything)
        self.I = {s: [all_idx] + [None] * sched.r for s in _SIDES}
        self.seg_own = {s: [None] * (sched.r + 1) for s in _SIDES}
        self.seg_peer = {s: [None] * (sched.r + 1) for s in _SIDES}
        self.seg_post = {s: None for s in _SIDES}
        # packed (int, bit-length) per (side, phase); phase r+1 = post segment
        self._packed: dict = {}

    def _next_occurrence(self, stage: str, phase: int) -> int:
        key = (stage, phase)
        self.exec_counts[key] = self.exec_counts.get(key, 0) + 1
        return self.exec_counts[key]

    def _packed_phase(self, side: str, j: int) -> tuple[int, int]:
        """Packed canonical bits of one phase of one party's history view."""
        key = (side, j)
        hit = self._packed.get(key)
        if hit is not None:
            return hit
        if j == self.sched.r + 1:
            val, n = _pack_rows_int(self.seg_post[side])
        else:
            peer = self.seg_peer[side][j]
            if side == "A":
                a_part, b_part = self.seg_own[side][j], peer
            else:
                a_part, b_part = peer, self.seg_own[side][j]
            pa, na = _pack_rows_int(a_part)
            pb, nb = _pack_rows_int(b_part)
            val, n = pa | (pb << na), na + nb
        self._packed[key] = (val, n)
        return val, n

    def _history_int(self, side: str, upto: int, with_post: bool) -> tuple[int, int]:
        """One party's view of the history so far as a packed integer, in the
        canonical order (phase-major, first party's bits before the second's)."""
        val, n = 0, 0
        for j in range(1, upto + 1):
            pv, pn = self._packed_phase(side, j)
            val |= pv << n
            n += pn
        if with_post and self.seg_post[side] is not None:
            pv, pn = self._packed_phase(side, self.sched.r + 1)
            val |= pv << n
            n += pn
        return val, n

    def _history_summary(self, upto: int, with_post: bool) -> tuple[bool, int, int]:
        """(views identical, A's history bits, B's history bits) without
        materialising the packed history integers."""
        equal = True
        n_a = n_b = 0
        for j in range(1, upto + 1):
            pa, na = self._packed_phase("A", j)
            pb, nb = self._packed_phase("B", j)
            equal = equal and na == nb and pa == pb
            n_a += na
            n_b += nb
        if with_post:
            post = self.sched.r + 1
            if self.seg_post["A"] is not None:
                pa, na = self._packed_phase("A", post)
                n_a += na
            else:
                pa, na = 0, 0
            if self.seg_post["B"] is not None:
                pb, nb = self._packed_phase("B", post)
                n_b += nb
            else:
                pb, nb = 0, 0
            equal = equal and na == nb and pa == pb
        return equal, n_a, n_b

    def _digest_check(
        self, stage: str, phase: int, occ: int, upto: int, with_post: bool
    ) -> tuple[bool, int]:
        """Exchange digests of both parties' history views; True iff they
        match after any injected check faults."""
        b_j = self.sched.B[phase - 1]
        transcript = self.transcript
        tag = f"{stage}-check-{phase}"
        faults = self.plan.for_event(stage, phase, occ, "check")
        same, na, nb = self._history_summary(upto, with_post)
        if not transcript.wants_payloads and not faults and na == nb and same:
            # identical histories match under any mask; burn the same coins
            if na:
                self.coins.draw_words(b_j * ((na + 63) // 64))
            transcript.record_len(Direction.A_TO_B, tag, b_j)
            transcript.record_len(Direction.B_TO_A, tag, b_j)
            return True, b_j
        ha, na = self._history_int("A", upto, with_post)
        hb, nb = self._history_int("B", upto, with_post)
        dig_a, dig_b = _twin_digest_ints(ha, na, hb, nb, b_j, self.coins)
        transcript.record(Direction.A_TO_B, tag, dig_a)
        transcript.record(Direction.B_TO_A, tag, dig_b)
        received = {"A": dig_b, "B": dig_a}
        for f in faults:
            received[f.side] = received[f.side] ^ Bits(
                f.flip & ((1 << b_j) - 1), b_j
            )
        ok = received["A"] == dig_a and received["B"] == dig_b
        return ok, b_j

    def refutation_phase(self, j: int) -> str:
        """Run refutation phase j; returns "pass", "fail" or "exhausted"."""
        sched = self.sched
        occ = self._next_occurrence("refute", j)
        self.phases += 1
        meter_before = self.meter.value
        for side in _SIDES:
            self.seg_own[side][j] = None
            self.seg_peer[side][j] = None
            self._packed.pop((side, j), None)
        l_j = sched.tests[j - 1]
        act = {s: self.I[s][j - 1] for s in _SIDES}
        bits_a, bits_b = _paired_phase_bits(
            self.inst, l_j, act["A"], act["B"], self.coins
        )
        bits = {"A": bits_a, "B": bits_b}
        view_at_a, view_at_b, exch_failed = _exchange_views(
            bits["A"],
            bits["B"],
            sched.k_bounds[j - 1],
            self.transcript,
            f"refute-{j}",
            Direction.A_TO_B if j % 2 == 1 else Direction.B_TO_A,
        )
        views = {"A": view_at_a, "B": view_at_b}
        for side in _SIDES:
            self.seg_own[side][j] = bits[side]
            self.seg_peer[side][j] = views[side]
        forced_pass = False
        for f in self.plan.for_event("refute", j, occ, "peer_view"):
            _apply_flip(self.seg_peer[f.side][j], f.flip)
            self._packed.pop((f.side, j), None)
            forced_pass = True
        if forced_pass and not exch_failed:
            passed, checked = True, sched.B[j - 1]
        elif exch_failed:
            passed, checked = False, 0
        else:
            passed, checked = self._digest_check("refute", j, occ, j, False)
        rewound_to = None
        if passed:
            for side in _SIDES:
                agree = (self.seg_own[side][j] == self.seg_peer[side][j]).all(axis=1)
                self.I[side][j] = self.I[side][j - 1][agree]
            if j == sched.r:
                self._append_post_stage()
            result = "pass"
        else:
            exhausted = self.meter.add(
                "refute", j, sched.refute_fail_increment(j), "history check failed"
            )
            rewound_to = max(1, j - 1)
            result = "exhausted" if exhausted else "fail"
        self.trace.append(
            PhaseRecord(
                "refute",
                j,
                occ,
                passed,
                len(self.I["A"][j]) if passed else -1,
                len(self.I["B"][j]) if passed else -1,
                meter_before,
                self.meter.value,
                checked,
                rewound_to,
            )
        )
        return result

    def _append_post_stage(self) -> None:
        """After the last refutation phase each party locally appends E'
        confirmation test bits per surviving coordinate (zero communication)."""
        occ = self.exec_counts.get(("refute", self.sched.r), 1)
        post_a, post_b = _paired_phase_bits(
            self.inst,
            self.sched.budget,
            self.I["A"][self.sched.r],
            self.I["B"][self.sched.r],
            self.coins,
        )
        post = {"A": post_a, "B": post_b}
        for side in _SIDES:
            self.seg_post[side] = post[side]
            self._packed.pop((side, self.sched.r + 1), None)
        for f in self.plan.for_event("refute", self.sched.r, occ, "post"):
            _apply_flip(self.seg_post[f.side], f.flip)

    def run_refutation(self, start: int) -> bool:
        """Refutation stage from phase `start`; False when budget exhausted."""
        j = start
        while True:
            result = self.refutation_phase(j)
            if result == "exhausted":
                return False
            if result == "pass":
                if j == self.sched.r:
                    return True
                j += 1
            else:
                j = max(1, j - 1)

    def run_verification(self) -> str:
        """Verification stage; returns "ok" or "budget_exhausted"."""
        sched = self.sched
        j = sched.r
        while True:
            occ = self._next_occurrence("verify", j)
            self.phases += 1
            meter_before = self.meter.value
            passed, checked = self._digest_check("verify", j, occ, sched.r, True)
            rewound_to = None
            exhausted = False
            if not passed:
                exhausted = self.meter.add(
                    "verify", j, sched.verify_fail_increment(j), "history check failed"
                )
                rewound_to = j
            self.trace.append(
                PhaseRecord(
                    "verify",
                    j,
                    occ,
                    passed,
                    len(self.I["A"][sched.r]),
                    len(self.I["B"][sched.r]),
                    meter_before,
                    self.meter.value,
                    checked,
                    rewound_to,
                )
            )
            if passed:
                if sum(sched.B[j - 1 :]) >= sched.budget or j == 1:
                    return "ok"
                j -= 1
            else:
                if exhausted:
                    return "budget_exhausted"
                if not self.run_refutation(j):
                    return "budget_exhausted"
                j = sched.r


def rewind_equality_testing(
    instance: Instance,
    r: int,
    E: int,
    fault_plan: FaultPlan | None = None,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
    seed: int = 0,
    c: int = 2,
    strict_domain: bool = False,
) -> RewindResult:
    """Equality testing with history checks and rewinds.

    Completes with per-coordinate verdicts, or reports budget exhaustion when
    the accumulated error meter reaches E' = c*E (an error outcome)."""
    if E < 1:
        raise ValueError("E must be positive")
    k0 = min(instance.k, E)
    _check_r(r, k0, 6, strict_domain)
    transcript = transcript if transcript is not None else Transcript()
    coins = coins if coins is not None else SharedCoins(seed)
    sched = RewindSchedule.build(k0, r, E, c)
    run = _RewindRun(
        instance, sched, fault_plan if fault_plan is not None else _EMPTY_PLAN,
        transcript, coins,
    )
    if run.run_refutation(1):
        outcome = run.run_verification()
    else:
        outcome = "budget_exhausted"
    if outcome == "ok":
        masks = {}
        for side in _SIDES:
            m = np.zeros(instance.k, dtype=bool)
            m[run.I[side][sched.r]] = True
            masks[side] = m
        mask_a, mask_b = masks["A"], masks["B"]
    else:
        mask_a = mask_b = None
    return RewindResult(
        outcome=outcome,
        equal_mask=mask_a,
        equal_mask_b=mask_b,
        schedule=sched,
        meter=run.meter,
        phases_executed=run.phases,
        trace=run.trace,
        transcript=transcript,
    )


class AdaptiveRoundRecord(NamedTuple):
    round_index: int
    sender: str
    i_star: int
    fp_bound: int  # k_j after this round
    survivors: int
    bits_sent: int


@dataclass
class AdaptiveResult:
    outcome: str  # "ok" | "protocol_failure"
    equal_mask: np.ndarray | None
    k0: int
    r: int
    budget: int  # E' = 7E
    invocations: int  # parallel encodings per round from round 2 on
    trace: list
    transcript: object

    @property
    def ledger(self):
        return self.transcript.ledger()


def _one_way_batch(
    bits_sender: np.ndarray,
    bits_receiver: np.ndarray,
    d_bound: int,
    transcript: Transcript,
    phase_tag: str,
    direction: Direction,
) -> tuple[np.ndarray, bool]:
    """Sender transmits its test bits under a distance bound; returns the
    receiver's decoded view and a detected-failure flag."""
    n, l = bits_sender.shape
    if n == 0 or l == 0:
        return bits_sender.copy(), False
    d = min(d_bound, n)
    group_bits = max(1, min(l, MAX_SYMBOL_BITS))
    m = max(group_bits, n.bit_length())
    groups = (l + group_bits - 1) // group_bits
    if m > MAX_SYMBOL_BITS or groups * 2 * d * m >= n * l:
        if transcript.wants_payloads:
            transcript.record(direction, phase_tag, rows_to_bits(bits_sender))
        else:
            transcript.record_len(direction, phase_tag, n * l)
        return bits_sender.copy(), False
    sym_s = pack_bit_rows(bits_sender, group_bits)
    sym_r = pack_bit_rows(bits_receiver, group_bits)
    codec = SyndromeCodec(n, m, d)
    view = np.empty_like(sym_s)
    failed = False
    payload = Bits.empty()
    for g in range(groups):
        enc = codec.encode(sym_s[:, g])
        payload = payload + enc
        got, ok = codec.decode(sym_r[:, g], enc)
        view[:, g] = got
        failed |= not ok
    transcript.record(direction, phase_tag, payload)
    return _unpack_rows(view, group_bits, l), failed


def adaptive_equality_testing(
    instance: Instance,
    r: int,
    E: int,
    transcript: Transcript | None = None,
    coins: SharedCoins | None = None,
    seed: int = 0,
    strict_domain: bool = False,
) -> AdaptiveResult:
    """One-message-per-round equality testing with budget-rate adaptation.

    Round 1 is a single bounded-distance transfer.  Every later round sends
    log2(r) parallel fresh test-bit batches at doubling rates, each with its
    own digest; the largest decodable prefix i* yields the estimate 2**-i*
    of the spent error budget, which sets the next false-positive bound."""
    if E < 1:
        raise ValueError("E must be positive")
    k0 = min(instance.k, E)
    _check_r(r, k0, 2, strict_domain)
    if strict_domain and r > 1 and r & (r - 1):
        raise ValueError("r must be a power of two")
    transcript = transcript if transcript is not None else Transcript()
    base_seed = coins.seed if coins is not None else seed
    budget = 7 * E
    q = max(1, math.ceil(math.log2(r))) if r > 1 else 0
    trace = []

    # round 1: one transfer covering every coordinate, distance bound k0
    l_1 = ceil_scaled_power(budget, k0, r - 1, r)
    coins1 = SharedCoins(derive_seed(base_seed, 0x4144, 1))
    bits_a, bits_b = batch_test_bits_pair(
        instance.x, instance.y, instance.coord_bits, l_1, coins1
    )
    before = transcript.total_bits
    view, failed = _one_way_batch(
        bits_a, bits_b, k0, transcript, "round-1", Direction.A_TO_B
    )
    if failed:
        return AdaptiveResult(
            "protocol_failure", None, k0, r, budget, q, trace, transcript
        )
    agree = (view == bits_b).all(axis=1)
    active = np.arange(instance.k, dtype=np.int64)[agree]
    fp_bound = ceil_root_pow(k0, r - 1, r)  # k_1
    trace.append(
        AdaptiveRoundRecord(
            1, "A", 0, fp_bound, len(active), transcript.total_bits - before
        )
    )

    for j in range(2, r + 1):
        sender = "B" if j % 2 == 0 else "A"
        direction = Direction.B_TO_A if sender == "B" else Direction.A_TO_B
        l_j = ceil_scaled_power(2 * budget, k0, r - j, r)
        before = transcript.total_bits
        i_star = 0
        decoded = []
        for i in range(1, q + 1):
            # both parties know the active set, so coins are drawn for the
            # active rows only (keeps memory proportional to survivors)
            coins_ji = SharedCoins(derive_seed(base_seed, 0x4144, j, i))
            act_a, act_b = batch_test_bits_pair(
                instance.x[active],
                instance.y[active],
                instance.coord_bits,
                l_j * 2 ** (i - 1),
                coins_ji,
            )
            own_s = act_a if sender == "A" else act_b
            own_r = act_b if sender == "A" else act_a
            d_i = max(1, -(-fp_bound // 2 ** (i - 1)))
            view, failed = _one_way_batch(
                own_s, own_r, d_i, transcript, f"round-{j}-inv-{i}", direction
            )
            dig_key = derive_seed(base_seed, 0x4449, j, i)
            sent_digest = checksum(rows_to_bits(own_s), 2 * E, SharedCoins(dig_key))
            transcript.record(direction, f"round-{j}-inv-{i}", sent_digest)
            got_digest = checksum(rows_to_bits(view), 2 * E, SharedCoins(dig_key))
            if failed or got_digest != sent_digest:
                break
            decoded.append((view, own_r))
            i_star = i
        if i_star == 0 and q > 0:
            return AdaptiveResult(
                "protocol_failure", None, k0, r, budget, q, trace, transcript
            )
        keep = np.ones(len(active), dtype=bool)
        for view, own_r in decoded:
            keep &= (view == own_r).all(axis=1)
        active = active[keep]
        fp_bound = _ceil_root_shifted(k0, r - j, r, i_star)  # k_j
        trace.append(
            AdaptiveRoundRecord(
                j, sender, i_star, fp_bound, len(active), transcript.total_bits - before
            )
        )

    mask = np.zeros(instance.k, dtype=bool)
    mask[active] = True
    return AdaptiveResult(
        "ok", mask, k0, r, budget, q, trace, transcript
    )
