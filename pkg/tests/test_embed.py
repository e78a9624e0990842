import numpy as np
import pytest
from scipy import stats

from mgnet.coograph import CooccurrenceGraph
from mgnet.embed import (
    EmbeddingTable,
    WalkConfig,
    generate_walks,
    node2vec,
    pool_read_feature,
    read_embeddings,
    sgns_loss,
    train_skipgram,
    transition_probabilities,
    write_embeddings,
)
from mgnet.errors import ConfigError
from mgnet.kmer import KmerStream


def graph_from(edges, k=3):
    g = CooccurrenceGraph(k)
    for a, b, times in edges:
        for _ in range(times):
            g.observe_pair(a, b)
    return g


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def two_cliques():
    edges = []
    for group in ([0, 1, 2], [10, 11, 12]):
        for a in group:
            for b in group:
                if a != b:
                    edges.append((a, b, 1))
    return graph_from(edges)


class TestWalks:
    def test_two_cycle_alternates(self):
        g = graph_from([(1, 2, 1), (2, 1, 1)])
        walks = generate_walks(g, WalkConfig(walks_per_node=3, walk_length=4))
        for w in walks:
            assert len(w) == 4
            assert all(w[i] != w[i + 1] for i in range(3))
            assert set(w.tolist()) == {1, 2}

    def test_dead_end_stops_early(self):
        g = graph_from([(1, 2, 1)])
        walks = generate_walks(g, WalkConfig(walks_per_node=2, walk_length=10))
        assert [w.tolist() for w in walks] == [[1, 2], [1, 2]]

    def test_star_uniform(self):
        g = graph_from([(0, 1, 1), (0, 2, 1), (0, 3, 1)])
        walks = generate_walks(g, WalkConfig(walks_per_node=10_000, walk_length=2, seed=5))
        counts = np.bincount([w[1] for w in walks], minlength=4)[1:]
        n, p = counts.sum(), 1 / 3
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) < 3 * sigma)

    def test_weight_proportional_chi2(self):
        g = graph_from([(0, 1, 1), (0, 2, 2), (0, 3, 5)])  # weights 1, 3, f_s(4) = 2*sqrt(3)+4
        cfg = WalkConfig(walks_per_node=20_000, walk_length=2, seed=9)
        walks = generate_walks(g, cfg)
        observed = np.bincount([w[1] for w in walks], minlength=4)[1:]
        probs = transition_probabilities(g, cfg, 0)
        expected = np.array([probs[i] for i in (1, 2, 3)]) * observed.sum()
        total = 1 + 3 + (2 * np.sqrt(3) + 4)
        assert probs[1] == pytest.approx(1 / total)
        assert probs[3] == pytest.approx((2 * np.sqrt(3) + 4) / total)
        assert stats.chisquare(observed, expected).pvalue > 0.001

    def test_second_order_bias(self):
        # triangle 0->1, 1->{0,2,3}, 2->0 edge makes 2 "close" to 0; 3 is far
        g = graph_from([(0, 1, 1), (1, 0, 1), (1, 2, 1), (1, 3, 1), (2, 0, 1)])
        cfg = WalkConfig(return_p=0.5, inout_q=2.0)
        probs = transition_probabilities(g, cfg, 1, prev=0)
        # unnormalized: back to 0 -> 1/p = 2, 2 is a neighbour of 0 -> 1, 3 -> 1/q = 0.5
        assert probs[0] == pytest.approx(2 / 3.5)
        assert probs[2] == pytest.approx(1 / 3.5)
        assert probs[3] == pytest.approx(0.5 / 3.5)

    def test_biased_walk_empirical(self):
        g = graph_from([(0, 1, 1), (1, 0, 1), (1, 2, 1), (1, 3, 1), (2, 0, 1), (3, 1, 1)])
        cfg = WalkConfig(walks_per_node=6000, walk_length=3, return_p=0.5, inout_q=2.0, seed=2)
        walks = [w for w in generate_walks(g, cfg) if w[0] == 0]
        third = np.bincount([w[2] for w in walks], minlength=4)
        probs = transition_probabilities(g, cfg, 1, prev=0)
        expected = np.array([probs[i] for i in (0, 2, 3)]) * len(walks)
        assert stats.chisquare(third[[0, 2, 3]], expected).pvalue > 0.001

    def test_deterministic(self):
        g = two_cliques()
        cfg = WalkConfig(walks_per_node=3, walk_length=12, seed=4)
        a = generate_walks(g, cfg)
        b = generate_walks(g, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = generate_walks(g, WalkConfig(walks_per_node=3, walk_length=12, seed=5))
        assert not all(np.array_equal(x, y) for x, y in zip(a, c))

    def test_empty_graph(self):
        with pytest.raises(ConfigError):
            generate_walks(CooccurrenceGraph(3), WalkConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            WalkConfig(dims=1)
        with pytest.raises(ConfigError):
            WalkConfig(return_p=0)


class TestSkipGram:
    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(0)
        w_in = rng.normal(size=(5, 4)) * 0.5
        w_out = rng.normal(size=(5, 4)) * 0.5
        centers = np.array([0, 1, 2, 3, 4, 0])
        contexts = np.array([1, 2, 3, 4, 0, 2])
        negatives = rng.integers(0, 5, (6, 3))
        _, g_in, g_out = sgns_loss(w_in, w_out, centers, contexts, negatives)
        h = 1e-5
        for w, g in ((w_in, g_in), (w_out, g_out)):
            num = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                old = w[idx]
                w[idx] = old + h
                lp = sgns_loss(w_in, w_out, centers, contexts, negatives)[0]
                w[idx] = old - h
                lm = sgns_loss(w_in, w_out, centers, contexts, negatives)[0]
                w[idx] = old
                num[idx] = (lp - lm) / (2 * h)
            assert np.max(np.abs(num - g)) / np.max(np.abs(num)) < 1e-4

    def test_cliques_separate(self):
        g = two_cliques()
        intra, inter = [], []
        for seed in range(10):
            table = node2vec(g, WalkConfig(dims=16, walks_per_node=10, walk_length=20, window=3, epochs=5, batch_pairs=32, seed=seed))
            a, b = [0, 1, 2], [10, 11, 12]
            intra += [cosine(table[x], table[y]) for grp in (a, b) for x in grp for y in grp if x < y]
            inter += [cosine(table[x], table[y]) for x in a for y in b]
        assert np.mean(intra) > np.mean(inter)

    def test_structural_twins_similar(self):
        # u=20 and v=21 share exactly the same in/out neighbourhood
        edges = [(20, h, 2) for h in (30, 31, 32)] + [(21, h, 2) for h in (30, 31, 32)]
        edges += [(h, t, 2) for h in (30, 31, 32) for t in (20, 21)]
        edges += [(40 + i, 40 + (i + 1) % 8, 1) for i in range(8)] + [(40, 30, 1), (30, 40, 1)]
        g = graph_from(edges)
        table = node2vec(g, WalkConfig(dims=16, walks_per_node=20, walk_length=20, window=3, epochs=5, batch_pairs=32, seed=1))
        ids = table.ids.tolist()
        rng = np.random.default_rng(0)
        rand = [cosine(table[a], table[b]) for a, b in (rng.choice(ids, 2, replace=False) for _ in range(500))]
        assert cosine(table[20], table[21]) > np.percentile(rand, 90)

    def test_single_node_stays_at_init(self):
        walks = [np.array([7]), np.array([7])]
        table = train_skipgram(walks, WalkConfig(dims=4))
        assert table.ids.tolist() == [7]
        assert np.all(np.isfinite(table[7]))

    def test_empty_walks(self):
        with pytest.raises(ConfigError):
            train_skipgram([], WalkConfig())

    def test_loss_moving_average_decreases(self):
        g = two_cliques()
        hist = []
        node2vec(g, WalkConfig(dims=8, walks_per_node=20, walk_length=30, window=3, epochs=3, batch_pairs=64, seed=0), history=hist)
        window = max(len(hist) // 10, 1)
        avg = np.convolve(hist, np.ones(window) / window, mode="valid")
        assert avg[-1] < avg[0]

    def test_deterministic_training(self):
        g = two_cliques()
        cfg = WalkConfig(dims=8, walks_per_node=4, walk_length=10, window=2, seed=3)
        a, b = node2vec(g, cfg), node2vec(g, cfg)
        assert np.array_equal(a.matrix, b.matrix)


class TestPooling:
    def table(self):
        return EmbeddingTable([1, 2], np.array([[1.0, 0.0], [0.0, 1.0]]))

    def stream(self, ids):
        return KmerStream("r", np.array(ids, dtype=np.int64), 3, 1)

    def test_singleton(self):
        assert np.array_equal(pool_read_feature(self.stream([1]), self.table()), [1.0, 0.0])

    def test_mean(self):
        assert np.allclose(pool_read_feature(self.stream([1, 2]), self.table()), [0.5, 0.5])

    def test_unseen_gives_zero(self):
        assert np.array_equal(pool_read_feature(self.stream([5, 9]), self.table()), [0.0, 0.0])

    def test_unseen_skipped(self):
        assert np.allclose(pool_read_feature(self.stream([1, 9, 9]), self.table()), [1.0, 0.0])

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        table = EmbeddingTable(np.arange(10), rng.normal(size=(10, 3)))
        ids = rng.integers(0, 12, 30)
        a = pool_read_feature(self.stream(ids), table)
        b = pool_read_feature(self.stream(rng.permutation(ids)), table)
        assert np.allclose(a, b, atol=1e-12)


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        table = EmbeddingTable([3, 1, 9], rng.normal(size=(3, 4)))
        path = tmp_path / "emb.txt"
        write_embeddings(table, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "3 4"
        assert lines[1].split()[0] == "1"
        back = read_embeddings(path)
        assert back.ids.tolist() == [1, 3, 9]
        assert np.allclose(back.matrix, table.matrix, rtol=1e-5)
        write_embeddings(back, tmp_path / "again.txt")
        assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()
