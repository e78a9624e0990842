"""Biased random walks + skip-gram with negative sampling over the k-mer graph.

Walks follow the second-order return/in-out bias of node2vec on top of the
edge weights. Embeddings are trained with mini-batched SGD on the
negative-sampling objective; per-read global features are the mean of the
embeddings of the read's k-mers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .coograph import CooccurrenceGraph
from .errors import ConfigError, ParseError
from .kmer import KmerStream


@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 10
    walk_length: int = 80
    return_p: float = 1.0
    inout_q: float = 1.0
    window: int = 10
    negatives: int = 5
    dims: int = 128
    epochs: int = 1
    seed: int = 0
    learning_rate: float = 0.025
    batch_pairs: int = 512

    def __post_init__(self):
        problems = []
        for name in ("walks_per_node", "walk_length", "window", "negatives", "epochs", "batch_pairs"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.dims < 2:
            problems.append("dims must be >= 2")
        if not (self.return_p > 0 and self.inout_q > 0):
            problems.append("return_p and inout_q must be > 0")
        if self.learning_rate <= 0:
            problems.append("learning_rate must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))


class EmbeddingTable:
    """Row-per-node embedding matrix with id lookup."""

    def __init__(self, ids, matrix):
        ids = np.asarray(ids, dtype=np.int64)
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ConfigError("embedding matrix must have one row per id")
        if not np.all(np.isfinite(matrix)):
            raise ConfigError("embedding vectors must be finite")
        order = np.argsort(ids, kind="stable")
        self.ids = ids[order]
        self.matrix = matrix[order]
        if len(self.ids) and np.any(np.diff(self.ids) == 0):
            raise ConfigError("duplicate ids in embedding table")
        self._row = {int(i): r for r, i in enumerate(self.ids)}

    @property
    def dims(self) -> int:
        return self.matrix.shape[1]

    @property
    def vectors(self) -> dict[int, np.ndarray]:
        return {int(i): self.matrix[r] for r, i in enumerate(self.ids)}

    def __len__(self):
        return len(self.ids)

    def __contains__(self, node):
        return int(node) in self._row

    def __getitem__(self, node) -> np.ndarray:
        return self.matrix[self._row[int(node)]]

    def rows_for(self, ids) -> np.ndarray:
        """Row index per id, -1 where the id has no embedding."""
        ids = np.asarray(ids, dtype=np.int64)
        pos = np.searchsorted(self.ids, ids)
        pos = np.clip(pos, 0, max(len(self.ids) - 1, 0))
        hit = (self.ids[pos] == ids) if len(self.ids) else np.zeros(len(ids), bool)
        return np.where(hit, pos, -1)


# -- walks ---------------------------------------------------------------


def _adjacency(graph: CooccurrenceGraph):
    adj = {}
    for src, items in graph.out_edges().items():
        nbrs = np.array([b for b, _ in items], dtype=np.int64)
        w = np.array([w for _, w in items], dtype=np.float64)
        adj[src] = (nbrs, w, np.cumsum(w))
    return adj


def _pick(cum, u):
    i = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return min(i, len(cum) - 1)


def walk_rng(seed: int, node: int, walk_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(node), int(walk_index)])


def generate_walks(graph: CooccurrenceGraph, cfg: WalkConfig) -> list[np.ndarray]:
    """``walks_per_node`` walks from every node with an out-edge.

    Each walk draws from its own generator seeded by (seed, node, walk index),
    so the result does not depend on iteration order. Walks stop early at
    nodes without out-edges.
    """
    if len(graph) == 0:
        raise ConfigError("cannot walk an empty graph")
    adj = _adjacency(graph)
    unbiased = cfg.return_p == 1.0 and cfg.inout_q == 1.0
    sets = None if unbiased else {v: set(nbrs.tolist()) for v, (nbrs, _, _) in adj.items()}
    starts = sorted(adj)
    walks = []
    for w in range(cfg.walks_per_node):
        for start in starts:
            rng = walk_rng(cfg.seed, start, w)
            u = rng.random(cfg.walk_length)
            walk = [start]
            prev = None
            cur = start
            for step in range(1, cfg.walk_length):
                entry = adj.get(cur)
                if entry is None:
                    break
                nbrs, weights, cum = entry
                if unbiased or prev is None:
                    nxt = int(nbrs[_pick(cum, u[step])])
                else:
                    prev_out = sets.get(prev, ())
                    bias = np.array(
                        [
                            1.0 / cfg.return_p if x == prev
                            else 1.0 if (x in prev_out or prev in sets.get(x, ()))
                            else 1.0 / cfg.inout_q
                            for x in nbrs.tolist()
                        ]
                    )
                    nxt = int(nbrs[_pick(np.cumsum(weights * bias), u[step])])
                walk.append(nxt)
                prev, cur = cur, nxt
            walks.append(np.array(walk, dtype=np.int64))
    return walks


def transition_probabilities(graph: CooccurrenceGraph, cfg: WalkConfig, cur: int, prev: Optional[int] = None):
    """Exact next-node distribution used by the walker, for testing and inspection."""
    adj = _adjacency(graph)
    nbrs, weights, _ = adj[cur]
    if prev is None or (cfg.return_p == 1.0 and cfg.inout_q == 1.0):
        p = weights
    else:
        out = {v: set(n.tolist()) for v, (n, _, _) in adj.items()}
        bias = np.array(
            [
                1.0 / cfg.return_p if x == prev
                else 1.0 if (x in out.get(prev, ()) or prev in out.get(x, ()))
                else 1.0 / cfg.inout_q
                for x in nbrs.tolist()
            ]
        )
        p = weights * bias
    return dict(zip(nbrs.tolist(), (p / p.sum()).tolist()))


# -- skip-gram ------------------------------------------------------------


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def sgns_loss(w_in, w_out, centers, contexts, negatives):
    """Mean negative-sampling loss and its gradients.

    ``centers``/``contexts`` are ``(B,)`` row indices, ``negatives`` is ``(B, n)``.
    Returns ``(loss, grad_in, grad_out)`` with gradients shaped like the
    weight matrices.
    """
    b = len(centers)
    v = w_in[centers]
    u_pos = w_out[contexts]
    u_neg = w_out[negatives]
    pos = np.einsum("bd,bd->b", v, u_pos)
    neg = np.einsum("bd,bnd->bn", v, u_neg)
    loss = -(_log_sigmoid(pos).sum() + _log_sigmoid(-neg).sum()) / b
    # d/dx of -log sigmoid(x) = sigmoid(x) - 1 ; of -log sigmoid(-x) = sigmoid(x)
    g_pos = (1.0 / (1.0 + np.exp(-pos)) - 1.0) / b
    g_neg = (1.0 / (1.0 + np.exp(-neg))) / b
    grad_v = g_pos[:, None] * u_pos + np.einsum("bn,bnd->bd", g_neg, u_neg)
    grad_in = np.zeros_like(w_in)
    grad_out = np.zeros_like(w_out)
    np.add.at(grad_in, centers, grad_v)
    np.add.at(grad_out, contexts, g_pos[:, None] * v)
    np.add.at(grad_out, negatives, g_neg[:, :, None] * v[:, None, :])
    return loss, grad_in, grad_out


def context_pairs(walks: Sequence[np.ndarray], window: int, index: dict[int, int]):
    centers = []
    contexts = []
    for walk in walks:
        rows = np.array([index[int(x)] for x in walk], dtype=np.int64)
        n = len(rows)
        for off in range(1, window + 1):
            if off >= n:
                break
            centers.append(rows[:-off])
            contexts.append(rows[off:])
            centers.append(rows[off:])
            contexts.append(rows[:-off])
    if not centers:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def train_skipgram(walks: Sequence[np.ndarray], cfg: WalkConfig, history: Optional[list] = None) -> EmbeddingTable:
    """Fit input vectors for every node seen in ``walks``.

    Pairs are visited in a seeded shuffled order in batches of
    ``cfg.batch_pairs``; the step size decays linearly to 1e-4 of its start
    value over all epochs. If ``history`` is given, the mean loss of every
    batch is appended to it.
    """
    if not walks:
        raise ConfigError("no walks to train on")
    vocab = np.unique(np.concatenate([np.asarray(w, dtype=np.int64) for w in walks]))
    if len(vocab) == 0:
        raise ConfigError("empty vocabulary")
    index = {int(v): i for i, v in enumerate(vocab)}
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    w_in = (rng.random((len(vocab), cfg.dims)) - 0.5) / cfg.dims
    w_out = np.zeros((len(vocab), cfg.dims))

    freq = np.zeros(len(vocab))
    for walk in walks:
        np.add.at(freq, [index[int(x)] for x in walk], 1.0)
    noise = freq**0.75
    noise /= noise.sum()
    noise_cum = np.cumsum(noise)

    centers, contexts = context_pairs(walks, cfg.window, index)
    n_pairs = len(centers)
    if n_pairs == 0:
        return EmbeddingTable(vocab, w_in)

    total_steps = cfg.epochs * math.ceil(n_pairs / cfg.batch_pairs)
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n_pairs)
        for lo in range(0, n_pairs, cfg.batch_pairs):
            sel = order[lo : lo + cfg.batch_pairs]
            c, o = centers[sel], contexts[sel]
            neg = np.searchsorted(noise_cum, rng.random((len(sel), cfg.negatives)) * noise_cum[-1], side="right")
            neg = np.minimum(neg, len(vocab) - 1)
            loss, g_in, g_out = sgns_loss(w_in, w_out, c, o, neg)
            lr = cfg.learning_rate * max(1.0 - step / total_steps, 1e-4)
            # Gradients are batch means; undo the mean and divide each row by
            # how often it occurs in the batch, so a node repeated many times
            # in one batch takes one averaged step instead of many stacked ones.
            occ_in = np.bincount(c, minlength=len(vocab))
            occ_out = np.bincount(np.concatenate([o, neg.ravel()]), minlength=len(vocab))
            w_in -= (lr * len(sel) / np.maximum(occ_in, 1))[:, None] * g_in
            w_out -= (lr * len(sel) / np.maximum(occ_out, 1))[:, None] * g_out
            step += 1
            if history is not None:
                history.append(float(loss))
    return EmbeddingTable(vocab, w_in)


def node2vec(graph: CooccurrenceGraph, cfg: WalkConfig, history: Optional[list] = None) -> EmbeddingTable:
    return train_skipgram(generate_walks(graph, cfg), cfg, history=history)


# -- pooling --------------------------------------------------------------


def pool_read_feature(stream: KmerStream, table: EmbeddingTable) -> np.ndarray:
    """Mean embedding over the read's k-mers that have a vector (zeros if none)."""
    rows = table.rows_for(stream.ids)
    rows = rows[rows >= 0]
    if len(rows) == 0:
        return np.zeros(table.dims)
    return table.matrix[rows].mean(axis=0)


def pool_many(streams: Iterable[KmerStream], table: EmbeddingTable) -> np.ndarray:
    feats = [pool_read_feature(s, table) for s in streams]
    return np.stack(feats) if feats else np.zeros((0, table.dims))


# -- file format ----------------------------------------------------------


def write_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", newline="\n") as out:
        out.write(f"{len(table)} {table.dims}\n")
        for node, row in zip(table.ids.tolist(), table.matrix):
            out.write(str(node) + " " + " ".join(f"{x:.6g}" for x in row) + "\n")


def read_embeddings(path) -> EmbeddingTable:
    with open(path) as handle:
        first = handle.readline().split()
        if len(first) != 2:
            raise ParseError("expected '<count> <dims>' header", line=1, path=str(path))
        count, dims = int(first[0]), int(first[1])
        ids, rows = [], []
        for lineno, line in enumerate(handle, start=2):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != dims + 1:
                raise ParseError(f"expected {dims + 1} fields", line=lineno, path=str(path))
            ids.append(int(fields[0]))
            rows.append([float(x) for x in fields[1:]])
    if len(ids) != count:
        raise ParseError(f"header declares {count} vectors, found {len(ids)}", path=str(path))
    return EmbeddingTable(ids, np.array(rows).reshape(count, dims))
