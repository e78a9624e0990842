"""Sample-level weighted directed k-mer co-occurrence graph.

Nodes are dense k-mer ids in ``[0, 4**k)``. An edge ``(a, b)`` records how
often k-mer ``b`` directly followed ``a`` in some read's strided k-mer
stream. Its weight follows the bounded relative-frequency update

    weight <- f_s(old_count / |old_count - new_count|)

applied on every re-observation, starting from 1 at first sight.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Iterator

from .errors import ConfigError, ParseError
from .kmer import KmerStream, check_k

EDGE_HEADER = "src\tdst\tcount\tweight"


def f_s(q: float) -> float:
    """Bounded update ``2*sqrt(max(q-1, 1)) + (min(q-2, 2) + 2)``."""
    if q < 0:
        raise ValueError("f_s is defined for q >= 0")
    return 2.0 * math.sqrt(max(q - 1.0, 1.0)) + (min(q - 2.0, 2.0) + 2.0)


def weight_for_count(count: int) -> float:
    """Weight an edge carries after ``count`` unit observations."""
    if count < 1:
        raise ValueError("edges exist only with count >= 1")
    return 1.0 if count == 1 else f_s(count - 1)


@dataclass
class EdgeState:
    count: int
    weight: float


class CooccurrenceGraph:
    def __init__(self, k: int):
        self.k = check_k(k)
        self.node_count = 4**self.k
        self.edges: dict[tuple[int, int], EdgeState] = {}

    def __len__(self):
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceGraph):
            return NotImplemented
        return self.k == other.k and self.edges == other.edges

    def _check_id(self, node):
        if not 0 <= node < self.node_count:
            raise IndexError(f"k-mer id {node} outside [0, {self.node_count}) for k={self.k}")

    def observe_pair(self, src: int, dst: int) -> EdgeState:
        src, dst = int(src), int(dst)
        self._check_id(src)
        self._check_id(dst)
        edge = self.edges.get((src, dst))
        if edge is None:
            edge = self.edges[(src, dst)] = EdgeState(count=1, weight=1.0)
            return edge
        old = edge.count
        new = old + 1
        edge.count = new
        edge.weight = f_s(old / abs(old - new))
        return edge

    def add_read(self, stream: KmerStream) -> int:
        if stream.k != self.k:
            raise ConfigError(f"stream has k={stream.k} but graph has k={self.k}")
        ids = stream.ids.tolist()
        for a, b in zip(ids, ids[1:]):
            self.observe_pair(a, b)
        return max(len(ids) - 1, 0)

    def nodes(self) -> list[int]:
        """Ids that appear as an endpoint of at least one edge, ascending."""
        seen = set()
        for a, b in self.edges:
            seen.add(a)
            seen.add(b)
        return sorted(seen)

    def out_edges(self) -> dict[int, list[tuple[int, float]]]:
        adj: dict[int, list[tuple[int, float]]] = {}
        for (a, b), edge in sorted(self.edges.items()):
            adj.setdefault(a, []).append((b, edge.weight))
        return adj

    def counts(self) -> Counter:
        return Counter({key: e.count for key, e in self.edges.items()})

    @classmethod
    def from_counts(cls, k: int, counts) -> "CooccurrenceGraph":
        graph = cls(k)
        for (a, b), c in sorted(counts.items()):
            if c < 1:
                continue
            graph._check_id(a)
            graph._check_id(b)
            graph.edges[(int(a), int(b))] = EdgeState(int(c), weight_for_count(int(c)))
        return graph

    def merge(self, other: "CooccurrenceGraph") -> "CooccurrenceGraph":
        """Sum counts of two partial graphs; weights follow from merged counts."""
        if other.k != self.k:
            raise ConfigError("cannot merge graphs built with different k")
        total = self.counts()
        total.update(other.counts())
        return CooccurrenceGraph.from_counts(self.k, total)


def build_global_graph(streams: Iterable[KmerStream], k: int | None = None) -> CooccurrenceGraph:
    graph = None
    if k is not None:
        graph = CooccurrenceGraph(k)
    for stream in streams:
        if graph is None:
            graph = CooccurrenceGraph(stream.k)
        graph.add_read(stream)
    if graph is None:
        raise ConfigError("cannot infer k from an empty stream collection; pass k explicitly")
    return graph


def _fmt_weight(w: float) -> str:
    return repr(float(f"{w:.6g}"))


def export_edges(graph: CooccurrenceGraph) -> Iterator[str]:
    yield EDGE_HEADER + "\n"
    for (a, b), edge in sorted(graph.edges.items()):
        yield f"{a}\t{b}\t{edge.count}\t{_fmt_weight(edge.weight)}\n"


def write_edges(graph: CooccurrenceGraph, path) -> None:
    with open(path, "w", newline="\n") as out:
        out.writelines(export_edges(graph))


def read_edges(path, k: int) -> CooccurrenceGraph:
    """Load an edge list; weights are recomputed from counts and cross-checked."""
    counts = {}
    stored = {}
    header_seen = False
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not header_seen:
                if line != EDGE_HEADER:
                    raise ParseError("missing edge-list header", line=lineno, path=str(path))
                header_seen = True
                continue
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError("expected 4 tab-separated fields", line=lineno, path=str(path))
            a, b, c = int(fields[0]), int(fields[1]), int(fields[2])
            counts[(a, b)] = c
            stored[(a, b)] = float(fields[3])
    graph = CooccurrenceGraph.from_counts(k, counts)
    for key, w in stored.items():
        if not math.isclose(graph.edges[key].weight, w, rel_tol=1e-5):
            raise ParseError(f"edge {key} weight {w} inconsistent with count {counts[key]}", path=str(path))
    return graph
