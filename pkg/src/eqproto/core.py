"""Shared domain types: instances, shared randomness, transcripts, cost accounting.

Everything here is deterministic given a seed.  Both parties of a two-party
protocol are simulated in-process and read from the same coin stream, so
"shared randomness" is exact by construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(*parts: int) -> int:
    """Stable 64-bit seed derived from a tuple of integers.

    Used for per-trial seeds (seed, trial_index) and for private-coin
    side channels, so replays are exact regardless of scheduling.
    """
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(int(p).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


class Bits:
    """Immutable bitstring backed by a big integer.

    Bit 0 is the first bit of the string (LSB-first packing).
    """

    __slots__ = ("value", "length")

    def __init__(self, value: int, length: int):
        if length < 0:
            raise ValueError("negative length")
        if value < 0:
            raise ValueError("negative value")
        if value >> length:
            raise ValueError("value wider than length")
        self.value = value
        self.length = length

    @classmethod
    def empty(cls) -> "Bits":
        return cls(0, 0)

    @classmethod
    def from01(cls, s: str) -> "Bits":
        v = 0
        for i, ch in enumerate(s):
            if ch == "1":
                v |= 1 << i
            elif ch != "0":
                raise ValueError("not a 0/1 string")
        return cls(v, len(s))

    @classmethod
    def from_words(cls, words: np.ndarray, length: int) -> "Bits":
        """Pack a uint64 array (word 0 = lowest bits) into a Bits of `length`."""
        b = np.ascontiguousarray(words, dtype="<u8").tobytes()
        v = int.from_bytes(b, "little") & ((1 << length) - 1)
        return cls(v, length)

    def to_words(self, nwords: int | None = None) -> np.ndarray:
        if nwords is None:
            nwords = (self.length + 63) // 64
        b = self.value.to_bytes(nwords * 8, "little")
        return np.frombuffer(b, dtype="<u8").astype(np.uint64)

    def to01(self) -> str:
        return "".join("1" if (self.value >> i) & 1 else "0" for i in range(self.length))

    def to_hex(self) -> str:
        nbytes = (self.length + 7) // 8
        return self.value.to_bytes(nbytes, "little").hex()

    @classmethod
    def from_hex(cls, s: str, length: int) -> "Bits":
        v = int.from_bytes(bytes.fromhex(s), "little")
        return cls(v & ((1 << length) - 1), length)

    def bit(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError("bit index out of range")
        return (self.value >> i) & 1

    def slice(self, start: int, stop: int) -> "Bits":
        if not 0 <= start <= stop <= self.length:
            raise IndexError("slice out of range")
        n = stop - start
        return Bits((self.value >> start) & ((1 << n) - 1), n)

    def __add__(self, other: "Bits") -> "Bits":
        return Bits(self.value | (other.value << self.length), self.length + other.length)

    def __xor__(self, other: "Bits") -> "Bits":
        if self.length != other.length:
            raise ValueError("length mismatch")
        return Bits(self.value ^ other.value, self.length)

    def __len__(self) -> int:
        return self.length

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Bits)
            and self.length == other.length
            and self.value == other.value
        )

    def __hash__(self) -> int:
        return hash((self.value, self.length))

    def __repr__(self) -> str:
        if self.length <= 64:
            return f"Bits({self.to01()!r})"
        return f"Bits(<{self.length} bits>)"


class SharedCoins:
    """Deterministic public coin stream shared by both parties.

    Bits come from a counter-based generator keyed by `seed`; `draw_counter`
    is the number of bits consumed so far and never decreases, so a protocol
    that rewinds automatically sees fresh coins.
    """

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.draw_counter = 0
        self._bg = np.random.Philox(key=self.seed)
        self._frac_word = 0  # leftover bits of the current word
        self._frac_len = 0

    def reseed(self, seed: int) -> "SharedCoins":
        """Restart the stream under a new seed, reusing the generator.

        Equivalent to constructing SharedCoins(seed) but much cheaper, which
        matters in Monte Carlo loops that need fresh coins per trial.
        """
        self.seed = seed & MASK64
        self.draw_counter = 0
        self._frac_word = 0
        self._frac_len = 0
        state = self._bg.state
        state["state"]["counter"][:] = 0
        state["state"]["key"][0] = self.seed
        state["state"]["key"][1] = 0
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        self._bg.state = state
        return self

    def _next_words(self, count: int) -> np.ndarray:
        """Fetch `count` whole words from the underlying word stream."""
        return self._bg.random_raw(count)

    def draw_bits(self, n: int) -> Bits:
        """Draw exactly n bits; advances draw_counter by n."""
        if n < 0:
            raise ValueError("negative draw")
        if n == 0:
            return Bits.empty()
        v = 0
        filled = 0
        if self._frac_len:
            take = min(n, self._frac_len)
            v = self._frac_word & ((1 << take) - 1)
            self._frac_word >>= take
            self._frac_len -= take
            filled = take
        if filled < n:
            need = n - filled
            nwords = (need + 63) // 64
            words = self._next_words(nwords)
            chunk = int.from_bytes(np.ascontiguousarray(words, "<u8").tobytes(), "little")
            v |= (chunk & ((1 << need) - 1)) << filled
            rem = nwords * 64 - need
            if rem:
                self._frac_word = chunk >> need
                self._frac_len = rem
        self.draw_counter += n
        return Bits(v, n)

    def draw_int(self, n: int) -> int:
        return self.draw_bits(n).value

    def draw_words(self, count: int) -> np.ndarray:
        """Fast path: draw count*64 bits as a uint64 array.

        Discards any fractional word left by a previous draw_bits call
        (alignment is deterministic, so both parties stay in sync).
        """
        if self._frac_len:
            self.draw_counter += self._frac_len
            self._frac_word = 0
            self._frac_len = 0
        out = self._next_words(count)
        self.draw_counter += 64 * count
        return out

    def draw_word_matrix(self, rows: int, words_per_row: int) -> np.ndarray:
        return self.draw_words(rows * words_per_row).reshape(rows, words_per_row)


class Direction(Enum):
    A_TO_B = "AtoB"
    B_TO_A = "BtoA"


class Message(NamedTuple):
    direction: Direction
    phase_tag: str
    payload: Bits

    @property
    def bit_length(self) -> int:
        return len(self.payload)


@dataclass
class CostLedger:
    bits_total: int
    bits_by_phase: dict
    rounds_merged: int
    rounds_raw: int


class Transcript:
    """Ordered message log with exact per-message bit accounting.

    Payloads are stored in full so tests can replay and corrupt them.
    Senders check `wants_payloads` before building payload bitstrings, so a
    counts-only transcript can skip that work entirely.
    """

    wants_payloads = True

    def __init__(self):
        self.messages: list[Message] = []
        self.total_bits = 0

    def record(self, direction: Direction, phase_tag: str, payload: Bits) -> None:
        self.messages.append(Message(direction, phase_tag, payload))
        self.total_bits += len(payload)

    @property
    def rounds_raw(self) -> int:
        return len(self.messages)

    def merged_round_count(self) -> int:
        """Number of maximal runs of consecutive same-direction messages."""
        count = 0
        prev = None
        for msg in self.messages:
            if msg.direction is not prev:
                count += 1
                prev = msg.direction
        return count

    def bits_by_phase(self) -> dict:
        out: dict[str, int] = {}
        for msg in self.messages:
            out[msg.phase_tag] = out.get(msg.phase_tag, 0) + len(msg.payload)
        return out

    def ledger(self) -> CostLedger:
        return CostLedger(
            bits_total=self.total_bits,
            bits_by_phase=self.bits_by_phase(),
            rounds_merged=self.merged_round_count(),
            rounds_raw=self.rounds_raw,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "messages": [
                    {
                        "direction": m.direction.value,
                        "phase_tag": m.phase_tag,
                        "bit_length": len(m.payload),
                        "payload_hex": m.payload.to_hex(),
                    }
                    for m in self.messages
                ],
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, s: str) -> "Transcript":
        data = json.loads(s)
        t = cls()
        for m in data["messages"]:
            t.record(
                Direction(m["direction"]),
                m["phase_tag"],
                Bits.from_hex(m["payload_hex"], m["bit_length"]),
            )
        return t


class TallyTranscript:
    """Counts-only transcript: exact bit accounting without payload storage.

    Produces the same ledger as a full Transcript but keeps only running
    totals, which makes large Monte Carlo campaigns much cheaper.  Replay and
    corruption need a full Transcript.
    """

    wants_payloads = False

    def __init__(self):
        self.total_bits = 0
        self._by_phase: dict[str, int] = {}
        self._raw = 0
        self._merged = 0
        self._prev: Direction | None = None

    def record(self, direction: Direction, phase_tag: str, payload: Bits) -> None:
        self.record_len(direction, phase_tag, len(payload))

    def record_len(self, direction: Direction, phase_tag: str, nbits: int) -> None:
        self.total_bits += nbits
        self._by_phase[phase_tag] = self._by_phase.get(phase_tag, 0) + nbits
        self._raw += 1
        if direction is not self._prev:
            self._merged += 1
            self._prev = direction

    @property
    def rounds_raw(self) -> int:
        return self._raw

    def merged_round_count(self) -> int:
        return self._merged

    def bits_by_phase(self) -> dict:
        return dict(self._by_phase)

    def ledger(self) -> CostLedger:
        return CostLedger(
            bits_total=self.total_bits,
            bits_by_phase=self.bits_by_phase(),
            rounds_merged=self._merged,
            rounds_raw=self._raw,
        )


@dataclass(frozen=True)
class Instance:
    """A pair of k-dimensional vectors over a 2**coord_bits universe."""

    k: int
    coord_bits: int
    x: np.ndarray
    y: np.ndarray
    equal_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.x) != self.k or len(self.y) != self.k:
            raise ValueError("vector length mismatch")

    @property
    def unequal_count(self) -> int:
        return self.k - len(self.equal_set)

    def equal_mask(self) -> np.ndarray:
        mask = np.zeros(self.k, dtype=bool)
        for i in self.equal_set:
            mask[i] = True
        return mask


def make_instance(k: int, coord_bits: int, equal_set, seed: int) -> Instance:
    """Random instance with x_i = y_i exactly on equal_set.

    Unequal coordinates get distinct uniform values.
    """
    if k < 1 or coord_bits < 1:
        raise ValueError("k and coord_bits must be positive")
    if coord_bits > 64:
        raise ValueError("coord_bits > 64 unsupported")
    equal_set = frozenset(equal_set)
    for i in equal_set:
        if not 0 <= i < k:
            raise ValueError(f"equal_set index {i} out of range")
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, 0x1A57)))
    hi = 1 << coord_bits
    x = rng.integers(0, hi, size=k, dtype=np.uint64)
    y = rng.integers(0, hi, size=k, dtype=np.uint64)
    eq = np.zeros(k, dtype=bool)
    if equal_set:
        eq[list(equal_set)] = True
    y[eq] = x[eq]
    if coord_bits == 1:
        # only one other value exists
        y[~eq] = x[~eq] ^ 1
    else:
        clash = (~eq) & (x == y)
        while clash.any():
            y[clash] = rng.integers(0, hi, size=int(clash.sum()), dtype=np.uint64)
            clash = (~eq) & (x == y)
    x.setflags(write=False)
    y.setflags(write=False)
    return Instance(k=k, coord_bits=coord_bits, x=x, y=y, equal_set=equal_set)
