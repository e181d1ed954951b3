import numpy as np
import pandas as pd
import pytest

from crimeflows import flownet
from crimeflows.errors import ValidationError
from crimeflows.ingest import TractSet
from crimeflows.panel import HOURS_PER_WEEK
from conftest import (
    grid_tracts,
    make_tract,
    oracle_pass_through,
    oracle_route,
    transitions_frame,
    venues_frame,
)


def adjacency_from_edges(nodes, edges):
    return flownet.AdjacencyNetwork(list(nodes), {tuple(e) for e in edges})


def od_from_weights(nodes, weights):
    od = flownet.ODNetwork(nodes=sorted(nodes))
    for (k, l), spec in weights.items():
        w = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        for t, n in spec.items():
            w[t] = n
        od.weights[(k, l)] = w
    return od


class TestQueenAdjacency:
    def test_2x2_grid_complete(self):
        ts = grid_tracts(2, 2)
        adj = flownet.build_queen_adjacency(ts)
        assert adj.n_edges() == 6  # all four squares meet at the shared corner

    def test_1x3_strip(self):
        ts = grid_tracts(3, 1)
        adj = flownet.build_queen_adjacency(ts)
        assert adj.n_edges() == 2

    def test_disjoint_squares(self):
        ts = TractSet([make_tract("A", 0, 0), make_tract("B", 10, 0)])
        adj = flownet.build_queen_adjacency(ts)
        assert adj.n_edges() == 0

    def test_5x5_grid_edge_count(self):
        # rook edges 2*5*4 = 40, diagonal edges 2*4*4 = 32
        adj = flownet.build_queen_adjacency(grid_tracts(5, 5))
        assert adj.n_edges() == 72


class TestCustomAdjacency:
    def test_symmetrized(self, tmp_path, path4_tracts):
        p = tmp_path / "edges.csv"
        p.write_text("A,B\n")
        adj = flownet.load_custom_adjacency(p, path4_tracts)
        assert adj.neighbors["A"] == ["B"] and adj.neighbors["B"] == ["A"]

    def test_self_edge_rejected(self, tmp_path, path4_tracts):
        p = tmp_path / "edges.csv"
        p.write_text("A,A\n")
        with pytest.raises(ValidationError, match="self-edge"):
            flownet.load_custom_adjacency(p, path4_tracts)

    def test_unknown_id_names_line(self, tmp_path, path4_tracts):
        p = tmp_path / "edges.csv"
        p.write_text("A,B\nA,Q\n")
        with pytest.raises(ValidationError, match="line 2"):
            flownet.load_custom_adjacency(p, path4_tracts)

    def test_empty_file_keeps_nodes(self, tmp_path, path4_tracts):
        p = tmp_path / "edges.csv"
        p.write_text("")
        adj = flownet.load_custom_adjacency(p, path4_tracts)
        assert adj.nodes == ["A", "B", "C", "D"] and adj.n_edges() == 0


class TestODNetwork:
    def venues(self):
        # A at [0,1)x[0,1), B at [1,2)x[0,1)
        return venues_frame(
            [("va", 0.5, 0.5, "leisure", "A"), ("vb", 1.5, 0.5, "leisure", "B"),
             ("va2", 0.2, 0.2, "leisure", "A")]
        )

    def tracts(self):
        return TractSet([make_tract("A", 0, 0), make_tract("B", 1, 0)])

    def test_aggregation_at_start_hour(self):
        rows = [("u", "2012-01-02T09:10:00Z", "2012-01-02T09:40:00Z", "va", "vb")] * 5
        od, drops = flownet.build_od_network(
            transitions_frame(rows), self.venues(), self.tracts())
        assert od.weights[("A", "B")][9] == 5  # Monday 09:xx
        assert drops["od_transitions_dropped"] == 0

    def test_directed_edges_distinct(self):
        rows = [
            ("u", "2012-01-02T09:00:00Z", "2012-01-02T09:30:00Z", "va", "vb"),
            ("u", "2012-01-02T10:00:00Z", "2012-01-02T10:30:00Z", "vb", "va"),
        ]
        od, _ = flownet.build_od_network(transitions_frame(rows), self.venues(), self.tracts())
        assert od.weights[("A", "B")][9] == 1
        assert od.weights[("B", "A")][10] == 1

    def test_selfloop_excluded(self):
        rows = [("u", "2012-01-02T09:00:00Z", "2012-01-02T09:30:00Z", "va", "va2")]
        od, drops = flownet.build_od_network(transitions_frame(rows), self.venues(), self.tracts())
        assert len(od.weights) == 0
        assert drops["od_selfloops_excluded"] == 1

    def test_edge_present_iff_positive_weight(self):
        rows = [("u", "2012-01-02T09:00:00Z", "2012-01-02T09:30:00Z", "va", "vb")]
        od, _ = flownet.build_od_network(transitions_frame(rows), self.venues(), self.tracts())
        for w in od.weights.values():
            assert w.sum() > 0


class TestShortestPath:
    def path_graph(self):
        return adjacency_from_edges("ABCD", [("A", "B"), ("B", "C"), ("C", "D")])

    def test_unique_path(self):
        assert flownet.shortest_path(self.path_graph(), "A", "D") == ["A", "B", "C", "D"]

    def test_tie_break_lexicographic(self):
        cyc = adjacency_from_edges("ABCD", [("A", "B"), ("B", "C"), ("C", "D"), ("D", "A")])
        assert flownet.shortest_path(cyc, "A", "C") == ["A", "B", "C"]

    def test_identity_query(self):
        assert flownet.shortest_path(self.path_graph(), "A", "A") == ["A"]

    def test_unreachable_is_none(self):
        adj = adjacency_from_edges("ABCD", [("A", "B")])
        assert flownet.shortest_path(adj, "A", "D") is None

    def test_matches_enumeration_oracle_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n = int(rng.integers(3, 11))
            nodes = [f"N{i:02d}" for i in range(n)]
            edges = set()
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.35:
                        edges.add((nodes[i], nodes[j]))
            adj = adjacency_from_edges(nodes, edges)
            cache = flownet.PathCache(adj)
            for o in nodes:
                for d in nodes:
                    assert cache.path(o, d) == oracle_route(adj.neighbors, o, d)

    def test_cache_counts_distinct_pairs(self):
        adj = self.path_graph()
        cache = flownet.PathCache(adj)
        for _ in range(5):
            cache.path("A", "D")
            cache.path("B", "D")
        assert cache.paths_computed == 2


class TestAlgorithmOne:
    def test_single_path_spreads_weight(self):
        adj = adjacency_from_edges("ABCD", [("A", "B"), ("B", "C"), ("C", "D")])
        od = od_from_weights("ABCD", {("A", "D"): {10: 3}})
        sp, rep = flownet.build_shortest_path_network(adj, od)
        for e in [("A", "B"), ("B", "C"), ("C", "D")]:
            assert sp.weights[e][10] == 3
            assert sp.weights[e].sum() == 3
        assert sp.weights[("B", "A")].sum() == 0
        assert rep["unreachable_od_pairs"] == 0

    def test_two_od_edges_accumulate(self):
        adj = adjacency_from_edges("ABC", [("A", "B"), ("B", "C")])
        od = od_from_weights("ABC", {("A", "C"): {5: 2}, ("B", "C"): {5: 1}})
        sp, _ = flownet.build_shortest_path_network(adj, od)
        assert sp.weights[("B", "C")][5] == 3
        assert sp.weights[("A", "B")][5] == 2

    def test_empty_od_all_zero(self):
        adj = adjacency_from_edges("ABC", [("A", "B"), ("B", "C")])
        od = flownet.ODNetwork(nodes=["A", "B", "C"])
        sp, _ = flownet.build_shortest_path_network(adj, od)
        assert sp.total_by_hour().sum() == 0
        # edge set still mirrors the adjacency network
        assert set(sp.weights) == {("A", "B"), ("B", "A"), ("B", "C"), ("C", "B")}

    def test_flow_conservation(self):
        rng = np.random.default_rng(23)
        nodes = [f"N{i}" for i in range(8)]
        edges = {(nodes[i], nodes[j]) for i in range(8) for j in range(i + 1, 8)
                 if rng.random() < 0.4}
        adj = adjacency_from_edges(nodes, edges)
        od = flownet.ODNetwork(nodes=sorted(nodes))
        cache = flownet.PathCache(adj)
        expected = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
        for _ in range(20):
            k, l = rng.choice(nodes, 2, replace=False)
            if (k, l) in od.weights or cache.path(k, l) is None:
                continue
            w = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
            w[rng.integers(0, HOURS_PER_WEEK, 5)] += rng.integers(1, 9, 5)
            od.weights[(k, l)] = w
            expected += w * (len(cache.path(k, l)) - 1)
        sp, _ = flownet.build_shortest_path_network(adj, od)
        assert np.array_equal(sp.total_by_hour(), expected)


class TestPassThrough:
    def test_interior_nodes_accrue(self):
        adj = adjacency_from_edges("ABCD", [("A", "B"), ("B", "C"), ("C", "D")])
        od = od_from_weights("ABCD", {("A", "D"): {10: 3}})
        pt, _ = flownet.pass_through_counts(adj, od)
        assert pt.value("B", 10) == 3 and pt.value("C", 10) == 3
        assert pt.value("A", 10) == 0 and pt.value("D", 10) == 0

    def test_adjacent_endpoints_no_interior(self):
        adj = adjacency_from_edges("AB", [("A", "B")])
        od = od_from_weights("AB", {("A", "B"): {4: 7}})
        pt, _ = flownet.pass_through_counts(adj, od)
        assert pt.counts.sum() == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            n = int(rng.integers(4, 13))
            nodes = [f"N{i:02d}" for i in range(n)]
            edges = set()
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.3:
                        edges.add((nodes[i], nodes[j]))
            adj = adjacency_from_edges(nodes, edges)
            od = flownet.ODNetwork(nodes=sorted(nodes))
            for _ in range(int(rng.integers(1, 15))):
                k, l = rng.choice(nodes, 2, replace=False)
                w = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
                w[rng.integers(0, HOURS_PER_WEEK, 3)] += rng.integers(1, 20, 3)
                od.weights.setdefault((k, l), np.zeros(HOURS_PER_WEEK, dtype=np.int64))
                od.weights[(k, l)] += w
            pt, rep = flownet.pass_through_counts(adj, od)
            oracle, unreachable = oracle_pass_through(adj.nodes, adj.neighbors, od.weights)
            assert np.array_equal(pt.counts, oracle)
            assert rep["unreachable_od_pairs"] == unreachable

    def test_pass_through_bounded_by_hour_total(self):
        rng = np.random.default_rng(9)
        adj = flownet.build_queen_adjacency(grid_tracts(4, 3))
        od = flownet.ODNetwork(nodes=list(adj.nodes))
        for _ in range(30):
            k, l = rng.choice(adj.nodes, 2, replace=False)
            w = np.zeros(HOURS_PER_WEEK, dtype=np.int64)
            w[rng.integers(0, HOURS_PER_WEEK, 4)] += rng.integers(1, 6, 4)
            od.weights.setdefault((k, l), np.zeros(HOURS_PER_WEEK, dtype=np.int64))
            od.weights[(k, l)] += w
        pt, _ = flownet.pass_through_counts(adj, od)
        totals = od.total_by_hour()
        assert (pt.counts <= totals[None, :]).all()

    def test_monotone_in_od_weight(self):
        adj = adjacency_from_edges("ABCDE", [("A", "B"), ("B", "C"), ("C", "D"), ("D", "E")])
        od1 = od_from_weights("ABCDE", {("A", "E"): {0: 1}})
        od2 = od_from_weights("ABCDE", {("A", "E"): {0: 1}, ("A", "D"): {3: 2}})
        pt1, _ = flownet.pass_through_counts(adj, od1)
        pt2, _ = flownet.pass_through_counts(adj, od2)
        assert (pt2.counts >= pt1.counts).all()

    def test_order_invariance(self):
        # identical transition multisets in different orders build identical networks
        rng = np.random.default_rng(13)
        tracts = grid_tracts(3, 2)
        venues = venues_frame(
            [(f"v{i}", (i % 3) + 0.5, (i // 3) + 0.5, "leisure", tid)
             for i, tid in enumerate(tracts.ids)]
        )
        rows = []
        for _ in range(60):
            i, j = rng.choice(6, 2, replace=False)
            h = rng.integers(0, 24)
            rows.append(("u", f"2012-01-02T{h:02d}:00:00Z",
                         f"2012-01-02T{h:02d}:30:00Z", f"v{i}", f"v{j}"))
        adj = flownet.build_queen_adjacency(tracts)
        frames = [transitions_frame(rows),
                  transitions_frame([rows[i] for i in rng.permutation(len(rows))])]
        results = []
        for frame in frames:
            od, _ = flownet.build_od_network(frame, venues, tracts)
            sp, _ = flownet.build_shortest_path_network(adj, od)
            pt, _ = flownet.pass_through_counts(adj, od)
            results.append((sp, pt))
        assert set(results[0][0].weights) == set(results[1][0].weights)
        for e in results[0][0].weights:
            assert np.array_equal(results[0][0].weights[e], results[1][0].weights[e])
        assert np.array_equal(results[0][1].counts, results[1][1].counts)

    def test_even_cycle_symmetry_as_multiset(self):
        # opposite interior nodes on an even cycle do not match per node
        # under the tie-break; the count multiset is what survives a
        # relabeling that mirrors the cycle
        def counts_by_position(names):
            # names[i] labels position i on a fixed 6-cycle; OD demand
            # flows symmetrically between positions 0 and 3
            edges = [(names[i], names[(i + 1) % 6]) for i in range(6)]
            adj = adjacency_from_edges(names, edges)
            od = od_from_weights(names, {(names[0], names[3]): {0: 2},
                                         (names[3], names[0]): {0: 2}})
            pt, _ = flownet.pass_through_counts(adj, od)
            return [int(pt.counts[pt.ids.index(n), 0]) for n in names]

        original = counts_by_position(list("ABCDEF"))
        relabeled = counts_by_position(list("AFEDCB"))
        assert sum(original) == 8  # two interior nodes per direction, weight 2
        assert original != relabeled  # tie-break follows the labels
        assert sorted(original) == sorted(relabeled)


def test_export_edges_long_format():
    adj = adjacency_from_edges("ABC", [("A", "B"), ("B", "C")])
    od = od_from_weights("ABC", {("A", "C"): {7: 2}})
    sp, _ = flownet.build_shortest_path_network(adj, od)
    out = flownet.export_edges(sp)
    assert set(out.columns) == {"src", "dst", "hour", "weight"}
    assert len(out) == 2
    assert (out["hour"] == 7).all() and (out["weight"] == 2).all()
