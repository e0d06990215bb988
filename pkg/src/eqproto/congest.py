"""Round-synchronous message-passing simulator and local triangle enumeration.

Nodes advance in lockstep rounds and may send at most B bits per edge per
round.  Each edge runs a two-party set-intersection session over the two
endpoints' neighbor lists; common neighbors are triangles.  Protocol
messages are chunked into B-bit pieces and pipelined greedily, so a session
consumes at least max(ceil(bits/B), merged rounds) simulator rounds.

Failure detection: every bounded-distance exchange carries a short hash of
the sender's true bit string, so a reconstruction that silently diverged is
caught except on a hash collision; claimed common neighbors are confirmed
the same way.  Edges whose sessions detect a failure are re-run in later
phases on the (much sparser) failure graph.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .core import Direction, Instance, SharedCoins, TallyTranscript, derive_seed
from .primitives import log_star
from .protocols_advanced import rewind_equality_testing
from .protocols_basic import dimension_reduce, simple_equality_testing
from .reductions import setint_via_eq

# ---------------------------------------------------------------------------
# network and round scheduler


class CongestNetwork:
    """Undirected simple graph whose edges carry <= B bits per round."""

    def __init__(self, n: int, edges, c_msg: int = 1):
        if n < 2:
            raise ValueError("need at least two nodes")
        if c_msg < 1:
            raise ValueError("c_msg must be positive")
        self.n = n
        self.adj: list[set] = [set() for _ in range(n)]
        self.edges: set = set()
        for u, v in edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError("self-loops not allowed")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError("node id out of range")
            e = (min(u, v), max(u, v))
            if e in self.edges:
                continue
            self.edges.add(e)
            self.adj[u].add(v)
            self.adj[v].add(u)
        self.delta = max((len(a) for a in self.adj), default=0)
        self.B = max(1, math.ceil(math.log2(n))) * c_msg
        self.rounds = 0

    def neighbors(self, u: int) -> set:
        return self.adj[u]


def run_round(network: CongestNetwork, outboxes: dict) -> dict:
    """Deliver one synchronous round of messages.

    `outboxes` maps (sender, receiver) to a bit count; every message must
    ride an existing edge and fit the per-round cap B.  Returns the inboxes
    (same mapping — delivery is lossless) and advances the round counter.
    """
    for (u, v), nbits in outboxes.items():
        if (min(u, v), max(u, v)) not in network.edges:
            raise ValueError(f"no edge between {u} and {v}")
        if nbits < 0:
            raise ValueError("negative message size")
        if nbits > network.B:
            raise ValueError(
                f"message of {nbits} bits exceeds the {network.B}-bit cap"
            )
    network.rounds += 1
    return dict(outboxes)


class SequenceTranscript(TallyTranscript):
    """Counts-only transcript that additionally keeps the (direction, bits)
    sequence, so a session can be chunk-scheduled onto the round clock.

    Messages whose tag matches an armored prefix are inflated by the
    failure-detection hash that rides along with them.
    """

    wants_payloads = False

    _ARMORED = ("phase-", "dimreduce-")

    def __init__(self, armor_bits: int = 0):
        super().__init__()
        self.entries: list[tuple[Direction, int]] = []
        self.armor_bits = armor_bits

    def record_len(self, direction: Direction, phase_tag: str, nbits: int) -> None:
        if self.armor_bits and phase_tag.startswith(self._ARMORED):
            nbits += self.armor_bits
        super().record_len(direction, phase_tag, nbits)
        self.entries.append((direction, nbits))


class EdgeProtocolSession:
    """One two-party session pinned to an edge, chunked into B-bit messages.

    A turn is a maximal run of same-direction protocol bits; the next turn
    cannot start before the previous one is fully delivered, so the session
    needs at least max(ceil(total/B), merged rounds) rounds.
    """

    def __init__(self, edge: tuple, entries):
        self.edge = (min(edge), max(edge))
        turns: list[list] = []
        for direction, nbits in entries:
            if nbits == 0:
                continue
            if turns and turns[-1][0] is direction:
                turns[-1][1] += nbits
            else:
                turns.append([direction, nbits])
        self.turns = [(d, b) for d, b in turns]
        self.total_bits = sum(b for _, b in self.turns)
        self.merged_rounds = len(self.turns)
        self._turn = 0
        self._sent = 0
        self.rounds_used = 0

    @property
    def done(self) -> bool:
        return self._turn >= len(self.turns)

    def rounds_needed(self, B: int) -> int:
        """Greedy-pipeline round count: one chunk per round per turn."""
        return sum(max(1, -(-b // B)) for _, b in self.turns)

    def next_chunk(self, B: int):
        """(sender, receiver, nbits) of the next chunk, or None when done."""
        if self.done:
            return None
        direction, total = self.turns[self._turn]
        nbits = min(B, total - self._sent)
        u, v = self.edge
        if direction is Direction.A_TO_B:
            return (u, v, nbits)
        return (v, u, nbits)

    def advance(self, nbits: int) -> None:
        direction, total = self.turns[self._turn]
        self._sent += nbits
        self.rounds_used += 1
        if self._sent >= total:
            self._turn += 1
            self._sent = 0


def drive_sessions(network: CongestNetwork, sessions) -> int:
    """Run all sessions to completion on the shared round clock.

    Every pending session sends one chunk per round over its own edge;
    returns the number of rounds consumed (the slowest session's count).
    """
    start = network.rounds
    pending = [s for s in sessions if not s.done]
    while pending:
        outboxes = {}
        for s in pending:
            u, v, nbits = s.next_chunk(network.B)
            outboxes[(u, v)] = nbits
        run_round(network, outboxes)
        for s in pending:
            _, _, nbits = s.next_chunk(network.B)
            s.advance(nbits)
        pending = [s for s in pending if not s.done]
    return network.rounds - start


# ---------------------------------------------------------------------------
# per-edge set-intersection sessions


def _composed_equality(r: int, E: int):
    """Dimension reduction followed by multi-phase equality testing.

    Works for any number of unequal coordinates: the reduction first cuts
    the candidate set to about E survivors, and a bounded-distance decode
    that still fails is flagged for the armor layer.
    """

    def inner(instance, transcript, coins, lead):
        red = dimension_reduce(instance, E, "testing", transcript, coins)
        failed = any(t[3] for t in red.trace)
        mask = np.zeros(instance.k, dtype=bool)
        if len(red.active):
            sub = Instance(
                k=len(red.active),
                coord_bits=instance.coord_bits,
                x=instance.x[red.active],
                y=instance.y[red.active],
            )
            eq = simple_equality_testing(sub, r, E, transcript, coins, lead=lead)
            failed = failed or any(t[3] for t in eq.trace)
            mask[red.active[eq.equal_mask]] = True
        return SimpleNamespace(equal_mask=mask, decode_failed=failed)

    return inner


@dataclass
class _SessionOutcome:
    edge: tuple
    claimed: frozenset  # confirmed common neighbors
    failed: bool  # detected failure -> edge joins the failure graph
    transcript: SequenceTranscript


def _pad_sets(neigh_u, neigh_v, k_pad: int, n: int):
    """Pad both neighbor sets to k_pad with disjoint dummy ids above n."""
    a = set(neigh_u)
    b = set(neigh_v)
    i = 0
    while len(a) < k_pad:
        a.add(n + 2 * i)
        i += 1
    i = 0
    while len(b) < k_pad:
        b.add(n + 2 * i + 1)
        i += 1
    return a, b


def _run_edge_session(
    u: int,
    v: int,
    neigh_u,
    neigh_v,
    k_pad: int,
    inner,
    armor_bits: int,
    n: int,
    universe_bits: int,
    coins: SharedCoins,
    private_coins: SharedCoins,
    collision_rng: np.random.Generator,
) -> _SessionOutcome:
    a, b = _pad_sets(neigh_u, neigh_v, k_pad, n)
    transcript = SequenceTranscript(armor_bits)
    res = setint_via_eq(
        a,
        b,
        inner,
        2.0**-armor_bits,
        transcript=transcript,
        coins=coins,
        universe_bits=universe_bits,
        private_coins=private_coins,
    )
    collide = 2.0**-armor_bits
    failed = False
    if res.intersection is None:
        # inner protocol gave up outright; always detected
        return _SessionOutcome((u, v), frozenset(), True, transcript)
    if getattr(res.inner_result, "decode_failed", False):
        # armor hash catches a diverged reconstruction unless it collides
        if collision_rng.random() >= collide:
            failed = True
    truth = set(neigh_u) & set(neigh_v)
    claimed = set(res.intersection)
    confirmed = set()
    for w in sorted(claimed):
        if w in truth:
            confirmed.add(w)
        elif collision_rng.random() < collide:
            confirmed.add(w)  # undetected spurious element
        else:
            failed = True  # confirmation hash exposed it
    if confirmed:
        # each confirmed element costs one hash exchange each way
        transcript.record_len(
            Direction.A_TO_B, "confirm", armor_bits * len(confirmed)
        )
        transcript.record_len(
            Direction.B_TO_A, "confirm", armor_bits * len(confirmed)
        )
    return _SessionOutcome((u, v), frozenset(confirmed), failed, transcript)


# ---------------------------------------------------------------------------
# triangle enumeration


@dataclass
class TriangleResult:
    triangles: frozenset  # sorted (a, b, c) triples
    rounds: int
    phase_stats: list = field(default_factory=list)
    exhausted: bool = False  # failure graph survived all phases


def _phase_params(n: int, delta: int, C: int, first: bool):
    """(k, r, E) for one phase of the enumeration cascade."""
    logn = max(1, math.ceil(math.log2(n)))
    if first:
        k = max(delta, logn)
        r = max(1, log_star(n))
        E = max(1, math.ceil(k ** (1 - 1 / r) / r))
    else:
        k = max(delta, 1)
        r = 2
        lg = max(2.0, math.log2(n))
        gamma = max(0.0, math.log(max(delta, 1), lg)) if delta > 1 else 0.0
        E = max(2, math.ceil(C * lg ** (1 - gamma / 2)))
    return k, r, E


def enumerate_triangles(
    network: CongestNetwork,
    config: dict | None = None,
    seed: int = 0,
) -> TriangleResult:
    """Local triangle enumeration through per-edge set intersection.

    Phase one (skipped when the max degree is below sqrt(log2 n)) covers the
    whole graph; each later phase re-runs only the failure graph with a much
    larger error budget, until no edge reports a detected failure.
    """
    cfg = {"C": 4, "max_phases": 32, "simulate_delivery": False}
    cfg.update(config or {})
    n = network.n
    armor_bits = 2 * max(1, math.ceil(math.log2(n)))
    collision_rng = np.random.Generator(
        np.random.Philox(key=derive_seed(seed, 0xC011))
    )
    triangles: set = set()
    stats: list[dict] = []
    edges = sorted(network.edges)
    adj = {u: set(network.adj[u]) for u in range(n)}
    first = network.delta >= math.sqrt(max(1.0, math.log2(n)))
    exhausted = False
    for phase in range(cfg["max_phases"]):
        if not edges:
            break
        delta = max(len(adj[u]) for u in adj) if adj else 0
        k, r, E = _phase_params(n, delta, cfg["C"], first and phase == 0)
        inner = _composed_equality(r, E)
        universe_bits = (n + 2 * k + 2).bit_length()
        phase_coins = SharedCoins(derive_seed(seed, phase, 0x7075))
        phase_private = SharedCoins(derive_seed(seed, phase, 0x7072))
        outcomes = []
        for u, v in edges:
            outcomes.append(
                _run_edge_session(
                    u, v, adj[u], adj[v], k, inner, armor_bits, n,
                    universe_bits, phase_coins, phase_private,
                    collision_rng,
                )
            )
        sessions = [
            EdgeProtocolSession(o.edge, o.transcript.entries) for o in outcomes
        ]
        if cfg["simulate_delivery"]:
            phase_rounds = drive_sessions(network, sessions)
        else:
            phase_rounds = max(
                (s.rounds_needed(network.B) for s in sessions), default=0
            )
            network.rounds += phase_rounds
        for o in outcomes:
            u, v = o.edge
            for w in o.claimed:
                if w < n and w != u and w != v:
                    triangles.add(tuple(sorted((u, v, w))))
        failed_edges = [o.edge for o in outcomes if o.failed]
        stats.append(
            {
                "phase": phase,
                "edges": len(edges),
                "delta": delta,
                "k": k,
                "r": r,
                "E": E,
                "rounds": phase_rounds,
                "bits": sum(o.transcript.total_bits for o in outcomes),
                "failed_edges": len(failed_edges),
            }
        )
        if not failed_edges:
            edges = []
            break
        adj = {u: set() for u in range(n)}
        for u, v in failed_edges:
            adj[u].add(v)
            adj[v].add(u)
        edges = sorted(failed_edges)
    else:
        exhausted = bool(edges)
    return TriangleResult(
        triangles=frozenset(triangles),
        rounds=network.rounds,
        phase_stats=stats,
        exhausted=exhausted,
    )


# ---------------------------------------------------------------------------
# orientations


@dataclass(frozen=True)
class Orientation:
    """Acyclic edge orientation with bounded out-degree."""

    out_neighbors: dict  # node -> frozenset of heads
    bound: int
    peel_iterations: int

    def out_degree(self, u: int) -> int:
        return len(self.out_neighbors.get(u, frozenset()))

    @property
    def max_out_degree(self) -> int:
        return max((len(s) for s in self.out_neighbors.values()), default=0)


def peel_orientation(network: CongestNetwork, lam: int, C: int = 3) -> Orientation:
    """Iteratively peel low-degree nodes, orienting their edges outward.

    Every peel removes all nodes of residual degree <= C*lam; a peel that
    removes nothing means the arboricity bound `lam` was wrong.  Edges
    between same-iteration nodes go from the lower to the higher id, so the
    (iteration, id) order witnesses acyclicity.
    """
    if C < 3:
        raise ValueError("C must be >= 3")
    if lam < 1:
        raise ValueError("lam must be positive")
    threshold = C * lam
    residual = {u: set(network.adj[u]) for u in range(network.n)}
    alive = set(range(network.n))
    out: dict[int, set] = {u: set() for u in range(network.n)}
    iterations = 0
    while alive:
        peel = {u for u in alive if len(residual[u]) <= threshold}
        if not peel:
            raise ValueError(
                f"peeling stalled: arboricity exceeds {lam} at C={C}"
            )
        for u in sorted(peel):
            for v in residual[u]:
                if v in peel:
                    if u < v:
                        out[u].add(v)
                else:
                    out[u].add(v)
            for v in residual[u]:
                residual[v].discard(u)
        for u in peel:
            residual[u] = set()
        alive -= peel
        iterations += 1
    return Orientation(
        out_neighbors={u: frozenset(s) for u, s in out.items()},
        bound=threshold,
        peel_iterations=iterations,
    )


def enumerate_triangles_oriented(
    network: CongestNetwork,
    orientation: Orientation,
    E: int,
    r: int,
    seed: int = 0,
    config: dict | None = None,
) -> TriangleResult:
    """Triangle enumeration over out-neighbor sets of an acyclic orientation.

    Each triangle is oriented (up to renaming) x->y, x->z, y->z and is found
    only by the session on edge {x, y}, whose out-neighbor sets both contain
    z.  Sessions use the rewinding equality protocol under the reduction.
    """
    cfg = {"simulate_delivery": False}
    cfg.update(config or {})
    n = network.n
    armor_bits = 2 * max(1, math.ceil(math.log2(n)))
    collision_rng = np.random.Generator(
        np.random.Philox(key=derive_seed(seed, 0xC012))
    )

    def inner(instance, transcript, coins, lead):
        res = rewind_equality_testing(instance, r, E, transcript=transcript, coins=coins)
        return SimpleNamespace(
            equal_mask=res.equal_mask,
            decode_failed=res.outcome != "ok",
            outcome=res.outcome,
        )

    k_pad = max(orientation.max_out_degree, 1)
    universe_bits = (n + 2 * k_pad + 2).bit_length()
    run_coins = SharedCoins(derive_seed(seed, 0x0E1, 0x7075))
    run_private = SharedCoins(derive_seed(seed, 0x0E1, 0x7072))
    triangles: set = set()
    outcomes = []
    for u, v in sorted(network.edges):
        a = orientation.out_neighbors.get(u, frozenset())
        b = orientation.out_neighbors.get(v, frozenset())
        outcomes.append(
            _run_edge_session(
                u, v, a, b, k_pad, inner, armor_bits, n, universe_bits,
                run_coins, run_private, collision_rng,
            )
        )
    sessions = [
        EdgeProtocolSession(o.edge, o.transcript.entries) for o in outcomes
    ]
    if cfg["simulate_delivery"]:
        rounds = drive_sessions(network, sessions)
    else:
        rounds = max((s.rounds_needed(network.B) for s in sessions), default=0)
        network.rounds += rounds
    failed = 0
    for o in outcomes:
        u, v = o.edge
        if o.failed:
            failed += 1
        for w in o.claimed:
            if w < n and w != u and w != v:
                triangles.add(tuple(sorted((u, v, w))))
    stats = [
        {
            "phase": 0,
            "edges": len(outcomes),
            "k": k_pad,
            "r": r,
            "E": E,
            "rounds": rounds,
            "bits": sum(o.transcript.total_bits for o in outcomes),
            "failed_edges": failed,
        }
    ]
    return TriangleResult(
        triangles=frozenset(triangles),
        rounds=network.rounds,
        phase_stats=stats,
        exhausted=failed > 0,
    )


# ---------------------------------------------------------------------------
# graph input


def gnp(n: int, p: float, seed: int) -> list:
    """Erdos-Renyi G(n, p) edge list, deterministic per seed."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, 0x6E70)))
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape[0]) < p
    return [(int(a), int(b)) for a, b in zip(iu[keep], ju[keep])]


def load_edge_list(lines) -> list:
    """Parse "u v" pairs (0-indexed), one per line; '#' starts a comment."""
    edges = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"bad edge line: {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return edges


def brute_force_triangles(n: int, edges) -> frozenset:
    """Exact reference enumeration by adjacency-set intersection."""
    adj = [set() for _ in range(n)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    out = set()
    for u in range(n):
        for v in adj[u]:
            if v <= u:
                continue
            for w in adj[u] & adj[v]:
                if w > v:
                    out.add((u, v, w))
    return frozenset(out)
