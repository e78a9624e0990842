import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mgnet.coograph import (
    CooccurrenceGraph,
    build_global_graph,
    export_edges,
    f_s,
    read_edges,
    weight_for_count,
    write_edges,
)
from mgnet.errors import ConfigError
from mgnet.kmer import KmerStream


def stream(ids, k=3, rid="r"):
    return KmerStream(rid, np.asarray(ids, dtype=np.int64), k, 1)


def pair_count_oracle(streams):
    counts = Counter()
    for s in streams:
        ids = list(s.ids)
        for t in range(len(ids) - 1):
            counts[(int(ids[t]), int(ids[t + 1]))] += 1
    return counts


def fs_oracle(q):
    # literal closed form evaluated independently of the module
    return 2 * math.sqrt(max(q - 1, 1)) + (min(q - 2, 2) + 2)


class TestFs:
    @pytest.mark.parametrize("q,expected", [(1, 3.0), (2, 4.0), (5, 8.0)])
    def test_spot_values(self, q, expected):
        assert f_s(q) == expected

    def test_q3(self):
        assert f_s(3) == pytest.approx(2 * math.sqrt(2) + 3)

    def test_nondecreasing_on_grid(self):
        grid = np.linspace(1, 200, 20001)
        vals = np.array([f_s(q) for q in grid])
        assert np.all(np.diff(vals) >= -1e-12)

    def test_exceeds_stated_bound(self):
        # the update is implemented as printed; it is not confined to [-2, 2]
        assert f_s(1) > 2


class TestObservePair:
    def test_first_observation(self):
        g = CooccurrenceGraph(3)
        e = g.observe_pair(1, 2)
        assert (e.count, e.weight) == (1, 1.0)

    def test_second(self):
        g = CooccurrenceGraph(3)
        g.observe_pair(1, 2)
        e = g.observe_pair(1, 2)
        assert (e.count, e.weight) == (2, 3.0)

    def test_fourth(self):
        g = CooccurrenceGraph(3)
        for _ in range(4):
            e = g.observe_pair(1, 2)
        assert e.count == 4
        assert e.weight == pytest.approx(2 * math.sqrt(2) + 3)

    def test_out_of_range(self):
        g = CooccurrenceGraph(2)
        with pytest.raises(IndexError):
            g.observe_pair(0, 16)
        with pytest.raises(IndexError):
            g.observe_pair(-1, 0)

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), max_size=60))
    def test_weight_is_function_of_count(self, pairs):
        g = CooccurrenceGraph(1)
        for a, b in pairs:
            g.observe_pair(a, b)
        for edge in g.edges.values():
            expected = 1.0 if edge.count == 1 else fs_oracle(edge.count - 1)
            assert edge.weight == expected


class TestAddRead:
    def test_chain(self):
        g = CooccurrenceGraph(3)
        assert g.add_read(stream([0, 1, 2])) == 2
        assert {k: (e.count, e.weight) for k, e in g.edges.items()} == {(0, 1): (1, 1.0), (1, 2): (1, 1.0)}

    def test_repeat(self):
        g = CooccurrenceGraph(3)
        g.add_read(stream([5, 6, 5, 6]))
        assert (g.edges[(5, 6)].count, g.edges[(5, 6)].weight) == (2, 3.0)
        assert (g.edges[(6, 5)].count, g.edges[(6, 5)].weight) == (1, 1.0)

    def test_empty(self):
        g = CooccurrenceGraph(3)
        assert g.add_read(stream([])) == 0
        assert len(g) == 0

    def test_k_mismatch(self):
        with pytest.raises(ConfigError):
            CooccurrenceGraph(3).add_read(stream([1, 2], k=4))


class TestBuild:
    def test_identical_reads(self):
        g = build_global_graph([stream([1, 2]), stream([1, 2])])
        assert (g.edges[(1, 2)].count, g.edges[(1, 2)].weight) == (2, 3.0)

    def test_disjoint_union(self):
        a = build_global_graph([stream([1, 2, 3])])
        b = build_global_graph([stream([7, 8])])
        ab = build_global_graph([stream([1, 2, 3]), stream([7, 8])])
        assert set(ab.edges) == set(a.edges) | set(b.edges)
        assert all(ab.edges[key].count == 1 for key in ab.edges)

    def test_bruteforce_oracle_1000_reads(self):
        rng = np.random.default_rng(7)
        streams = [stream(rng.integers(0, 16, rng.integers(0, 30)), k=2) for _ in range(1000)]
        g = build_global_graph(streams, k=2)
        oracle = pair_count_oracle(streams)
        assert {k: e.count for k, e in g.edges.items()} == dict(oracle)
        for key, c in oracle.items():
            assert g.edges[key].weight == (1.0 if c == 1 else fs_oracle(c - 1))

    def test_order_insensitive(self):
        rng = np.random.default_rng(3)
        streams = [stream(rng.integers(0, 8, 12), k=2) for _ in range(50)]
        g1 = build_global_graph(streams)
        g2 = build_global_graph(list(reversed(streams)))
        assert g1 == g2

    def test_sharded_merge_matches_sequential(self):
        rng = np.random.default_rng(4)
        streams = [stream(rng.integers(0, 16, 20), k=2) for _ in range(200)]
        full = build_global_graph(streams)
        left = build_global_graph(streams[:77], k=2)
        right = build_global_graph(streams[77:], k=2)
        assert left.merge(right) == full

    def test_empty_input_needs_k(self):
        with pytest.raises(ConfigError):
            build_global_graph([])
        assert len(build_global_graph([], k=3)) == 0


class TestExport:
    def test_empty_graph_header_only(self, tmp_path):
        assert "".join(export_edges(CooccurrenceGraph(3))) == "src\tdst\tcount\tweight\n"

    def test_single_row(self):
        g = CooccurrenceGraph(3)
        g.observe_pair(0, 7)
        lines = "".join(export_edges(g)).splitlines()
        assert lines[1] == "0\t7\t1\t1.0"

    def test_six_significant_digits_and_sorted(self):
        g = CooccurrenceGraph(2)
        for _ in range(4):
            g.observe_pair(3, 1)
        g.observe_pair(0, 9)
        lines = "".join(export_edges(g)).splitlines()[1:]
        assert lines == ["0\t9\t1\t1.0", "3\t1\t4\t5.82843"]

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        g = build_global_graph([stream(rng.integers(0, 64, 40)) for _ in range(30)])
        path = tmp_path / "edges.tsv"
        write_edges(g, path)
        assert read_edges(path, k=3) == g
        write_edges(read_edges(path, k=3), tmp_path / "again.tsv")
        assert path.read_bytes() == (tmp_path / "again.tsv").read_bytes()

    def test_weight_for_count(self):
        assert weight_for_count(1) == 1.0
        assert weight_for_count(2) == 3.0
        with pytest.raises(ValueError):
            weight_for_count(0)
