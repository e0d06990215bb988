"""Tests for the round-synchronous simulator and triangle enumeration."""

import math

import networkx as nx
import numpy as np
import pytest

from eqproto.congest import (
    CongestNetwork,
    EdgeProtocolSession,
    Orientation,
    brute_force_triangles,
    drive_sessions,
    enumerate_triangles,
    enumerate_triangles_oriented,
    gnp,
    load_edge_list,
    peel_orientation,
    run_round,
)
from eqproto.core import Direction


class TestNetwork:
    def test_cap_default(self):
        net = CongestNetwork(512, [(0, 1)])
        assert net.B == 9
        assert CongestNetwork(512, [(0, 1)], c_msg=3).B == 27

    def test_rejects_bad_edges(self):
        with pytest.raises(ValueError):
            CongestNetwork(4, [(0, 0)])
        with pytest.raises(ValueError):
            CongestNetwork(4, [(0, 5)])

    def test_duplicate_edges_collapse(self):
        net = CongestNetwork(4, [(0, 1), (1, 0), (0, 1)])
        assert net.edges == {(0, 1)}
        assert net.delta == 1


class TestRunRound:
    def test_empty_round_advances(self):
        net = CongestNetwork(4, [(0, 1)])
        assert run_round(net, {}) == {}
        assert net.rounds == 1

    def test_full_cap_delivered(self):
        net = CongestNetwork(4, [(0, 1), (2, 3)])
        inbox = run_round(net, {(0, 1): net.B, (3, 2): net.B})
        assert inbox == {(0, 1): net.B, (3, 2): net.B}
        assert net.rounds == 1

    def test_oversize_rejected(self):
        net = CongestNetwork(4, [(0, 1)])
        with pytest.raises(ValueError):
            run_round(net, {(0, 1): net.B + 1})
        with pytest.raises(ValueError):
            run_round(net, {(1, 2): 1})  # no such edge


class TestSession:
    def test_turn_merging(self):
        A, B = Direction.A_TO_B, Direction.B_TO_A
        s = EdgeProtocolSession((0, 1), [(A, 5), (A, 3), (B, 4), (A, 1)])
        assert s.turns == [(A, 8), (B, 4), (A, 1)]
        assert s.total_bits == 13
        assert s.merged_rounds == 3

    def test_round_lower_bounds(self):
        A, B = Direction.A_TO_B, Direction.B_TO_A
        s = EdgeProtocolSession((0, 1), [(A, 20), (B, 1), (A, 1), (B, 1)])
        cap = 4
        need = s.rounds_needed(cap)
        assert need >= math.ceil(s.total_bits / cap)
        assert need >= s.merged_rounds
        assert need == 5 + 1 + 1 + 1

    def test_drive_matches_analytic(self):
        A, B = Direction.A_TO_B, Direction.B_TO_A
        net = CongestNetwork(4, [(0, 1), (2, 3)])
        s1 = EdgeProtocolSession((0, 1), [(A, 25), (B, 7)])
        s2 = EdgeProtocolSession((2, 3), [(B, 3)])
        expect = max(s.rounds_needed(net.B) for s in (s1, s2))
        assert drive_sessions(net, [s1, s2]) == expect
        assert s1.rounds_used == s1.rounds_needed(net.B)
        assert s1.done and s2.done


class TestEnumerate:
    def test_k3(self):
        net = CongestNetwork(3, [(0, 1), (1, 2), (0, 2)])
        res = enumerate_triangles(net, seed=1)
        assert res.triangles == frozenset({(0, 1, 2)})
        assert not res.exhausted
        assert res.rounds >= 1

    def test_bipartite_always_empty(self):
        edges = [(u, v + 5) for u in range(5) for v in range(5)]
        for seed in range(10):
            net = CongestNetwork(10, edges)
            res = enumerate_triangles(net, seed=seed)
            assert res.triangles == frozenset()

    def test_matches_brute_force_small(self):
        for seed in range(20):
            edges = gnp(64, 0.08, seed)
            net = CongestNetwork(64, edges)
            res = enumerate_triangles(net, seed=seed)
            assert res.triangles == brute_force_triangles(64, edges)

    def test_soundness_every_reported_triple_is_a_triangle(self):
        for seed in range(10):
            edges = gnp(96, 0.06, seed)
            net = CongestNetwork(96, edges)
            res = enumerate_triangles(net, seed=seed)
            es = set(net.edges)
            for a, b, c in res.triangles:
                assert (a, b) in es and (b, c) in es and (a, c) in es

    def test_simulated_delivery_equals_analytic_rounds(self):
        edges = gnp(48, 0.1, 7)
        res_a = enumerate_triangles(CongestNetwork(48, edges), seed=7)
        res_b = enumerate_triangles(
            CongestNetwork(48, edges), {"simulate_delivery": True}, seed=7
        )
        assert res_a.triangles == res_b.triangles
        assert res_a.rounds == res_b.rounds

    def test_low_degree_skips_first_phase(self):
        # a cycle has max degree 2 < sqrt(log2 256): straight to r=2 phases
        n = 256
        edges = [(i, (i + 1) % n) for i in range(n)]
        res = enumerate_triangles(CongestNetwork(n, edges), seed=3)
        assert res.triangles == frozenset()
        assert res.phase_stats[0]["r"] == 2

    def test_first_phase_parameters(self):
        edges = gnp(512, 10 / 512, 5)
        net = CongestNetwork(512, edges)
        res = enumerate_triangles(net, seed=5)
        st = res.phase_stats[0]
        k = max(net.delta, 9)
        r = st["r"]
        assert st["k"] == k
        assert st["E"] == math.ceil(k ** (1 - 1 / r) / r)


class TestPeelOrientation:
    def _net(self, g):
        return CongestNetwork(g.number_of_nodes(), list(g.edges()))

    def test_tree(self):
        g = nx.random_labeled_tree(40, seed=1)
        o = peel_orientation(self._net(g), lam=1, C=3)
        assert o.max_out_degree <= 3
        assert o.peel_iterations <= 2 + math.ceil(math.log(40, 3))

    def test_clique_k8(self):
        g = nx.complete_graph(8)
        o = peel_orientation(self._net(g), lam=4, C=3)
        assert o.peel_iterations == 1
        assert o.max_out_degree <= 12

    def test_cycle_acyclic(self):
        n = 30
        net = CongestNetwork(n, [(i, (i + 1) % n) for i in range(n)])
        o = peel_orientation(net, lam=1, C=3)
        assert o.max_out_degree <= 2
        dg = nx.DiGraph(
            (u, v) for u, heads in o.out_neighbors.items() for v in heads
        )
        assert nx.is_directed_acyclic_graph(dg)
        assert dg.number_of_edges() == n

    def test_stall_detected(self):
        g = nx.complete_graph(8)  # min degree 7 > 3*1
        with pytest.raises(ValueError):
            peel_orientation(self._net(g), lam=1, C=3)

    def test_out_degree_bound_random(self):
        edges = gnp(100, 0.08, 9)
        net = CongestNetwork(100, edges)
        o = peel_orientation(net, lam=4, C=3)
        assert o.max_out_degree <= 12
        # every edge oriented exactly once
        total = sum(len(s) for s in o.out_neighbors.values())
        assert total == len(net.edges)


class TestOriented:
    def test_single_directed_triangle(self):
        net = CongestNetwork(3, [(0, 1), (1, 2), (0, 2)])
        orient = Orientation(
            out_neighbors={0: frozenset({1, 2}), 1: frozenset({2}), 2: frozenset()},
            bound=2,
            peel_iterations=1,
        )
        res = enumerate_triangles_oriented(net, orient, E=8, r=1, seed=1)
        assert res.triangles == frozenset({(0, 1, 2)})

    def test_forest_zero_triangles(self):
        for seed in range(5):
            g = nx.random_labeled_tree(50, seed=seed)
            net = CongestNetwork(50, list(g.edges()))
            o = peel_orientation(net, lam=1, C=3)
            res = enumerate_triangles_oriented(net, o, E=12, r=2, seed=seed)
            assert res.triangles == frozenset()

    def test_matches_brute_force_with_peel(self):
        for seed in range(15):
            edges = gnp(128, 6 / 128, seed)
            net = CongestNetwork(128, edges)
            o = peel_orientation(net, lam=4, C=3)
            r = max(1, math.ceil(math.log2(max(2, o.max_out_degree))))
            res = enumerate_triangles_oriented(net, o, E=14, r=r, seed=seed)
            assert res.triangles == brute_force_triangles(128, edges)
            assert not res.exhausted

    def test_simulated_delivery_agrees(self):
        edges = gnp(64, 0.07, 2)
        net1 = CongestNetwork(64, edges)
        net2 = CongestNetwork(64, edges)
        o = peel_orientation(net1, lam=4, C=3)
        r1 = enumerate_triangles_oriented(net1, o, E=12, r=2, seed=2)
        r2 = enumerate_triangles_oriented(
            net2, o, E=12, r=2, seed=2, config={"simulate_delivery": True}
        )
        assert r1.triangles == r2.triangles
        assert r1.rounds == r2.rounds


class TestGraphIO:
    def test_gnp_deterministic(self):
        assert gnp(50, 0.1, 3) == gnp(50, 0.1, 3)
        assert gnp(50, 0.1, 3) != gnp(50, 0.1, 4)

    def test_gnp_bounds(self):
        with pytest.raises(ValueError):
            gnp(10, 1.5, 0)
        assert gnp(10, 0.0, 0) == []

    def test_load_edge_list(self):
        lines = ["0 1", "  # comment", "2 3  # trailing", "", "1 2"]
        assert load_edge_list(lines) == [(0, 1), (2, 3), (1, 2)]
        with pytest.raises(ValueError):
            load_edge_list(["0 1 2"])
