"""Per-class metrics, k-means, and Hungarian cluster-to-class alignment."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray  # rows = truth, cols = predicted

    @classmethod
    def from_labels(cls, truth, predicted, classes=None) -> "ConfusionMatrix":
        truth, predicted = list(truth), list(predicted)
        if len(truth) != len(predicted):
            raise ConfigError("truth and predictions differ in length")
        if classes is None:
            classes = sorted(set(truth) | set(predicted))
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(truth, predicted):
            counts[index[t], index[p]] += 1
        return cls(list(classes), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _ratio(num, den):
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


def precision_recall_f1(cm: ConfusionMatrix) -> dict:
    """``{class: (precision, recall, f1)}``; any 0/0 is reported as 0."""
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    precision = _ratio(tp, c.sum(axis=0))
    recall = _ratio(tp, c.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return {cls: (float(p), float(r), float(f)) for cls, p, r, f in zip(cm.classes, precision, recall, f1)}


def macro_average(metrics: dict) -> tuple[float, float, float]:
    if not metrics:
        return (0.0, 0.0, 0.0)
    arr = np.array(list(metrics.values()))
    return tuple(float(x) for x in arr.mean(axis=0))


def macro_f1(truth, predicted, classes=None) -> float:
    if classes is None:
        classes = sorted(set(truth))
    cm = ConfusionMatrix.from_labels(truth, predicted, sorted(set(classes) | set(predicted) | set(truth)))
    per = precision_recall_f1(cm)
    return float(np.mean([per[c][2] for c in classes]))


def write_metrics(metrics: dict, path, extra_rows: Sequence[tuple] = ()) -> None:
    p, r, f = macro_average(metrics)
    with open(path, "w", newline="\n") as out:
        out.write("class\tprecision\trecall\tf1\n")
        for cls, (pc, rc, fc) in metrics.items():
            out.write(f"{cls}\t{pc:.6f}\t{rc:.6f}\t{fc:.6f}\n")
        out.write(f"macro\t{p:.6f}\t{r:.6f}\t{f:.6f}\n")
        for row in extra_rows:
            out.write("\t".join(str(x) for x in row) + "\n")


def write_confusion(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="\n") as out:
        out.write("truth\\predicted\t" + "\t".join(map(str, cm.classes)) + "\n")
        for cls, row in zip(cm.classes, cm.counts):
            out.write(f"{cls}\t" + "\t".join(str(int(v)) for v in row) + "\n")


# -- k-means ------------------------------------------------------------------


def _sq_dists(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans(features, k: int, seed: int = 0, max_iter: int = 300, history: list | None = None) -> np.ndarray:
    """Lloyd iterations from k-means++ seeds; stops when assignments stop changing.

    Empty clusters keep their previous centroid. If ``history`` is given the
    within-cluster sum of squares after each assignment step is appended.
    """
    x = np.asarray(features, dtype=np.float64)
    if k < 1:
        raise ConfigError("k must be >= 1")
    if x.ndim != 2 or len(x) < k:
        raise ConfigError(f"need at least k={k} samples, got {len(x)}")
    rng = np.random.default_rng([seed, 0x6B])
    centers = kmeans_plusplus(x, k, rng)
    assign = None
    for _ in range(max_iter):
        d = _sq_dists(x, centers)
        new = d.argmin(axis=1)
        if history is not None:
            history.append(float(d[np.arange(len(x)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return assign


def inertia(features, assignments) -> float:
    x = np.asarray(features, dtype=np.float64)
    total = 0.0
    for j in np.unique(assignments):
        m = x[assignments == j]
        total += float(((m - m.mean(axis=0)) ** 2).sum())
    return total


# -- alignment ----------------------------------------------------------------


def contingency(assignments, labels):
    clusters = sorted(set(np.asarray(assignments).tolist()))
    classes = sorted(set(labels))
    ci = {c: i for i, c in enumerate(clusters)}
    li = {c: i for i, c in enumerate(classes)}
    table = np.zeros((len(clusters), len(classes)), dtype=np.int64)
    for a, l in zip(np.asarray(assignments).tolist(), labels):
        table[ci[a], li[l]] += 1
    return clusters, classes, table


def hungarian_align(assignments, labels):
    """Best one-to-one cluster->class mapping by total overlap.

    Returns ``(mapping, accuracy)``; clusters left unmatched (more clusters
    than classes) map to ``None`` and count as errors.
    """
    labels = list(labels)
    if len(labels) == 0 or len(labels) != len(assignments):
        raise ConfigError("hungarian_align needs equally sized, non-empty inputs")
    clusters, classes, table = contingency(assignments, labels)
    rows, cols = linear_sum_assignment(-table)
    mapping = {c: None for c in clusters}
    for r, c in zip(rows, cols):
        mapping[clusters[r]] = classes[c]
    matched = int(table[rows, cols].sum())
    return mapping, matched / len(labels)


def apply_mapping(assignments, mapping) -> list:
    return [mapping[a] for a in np.asarray(assignments).tolist()]
