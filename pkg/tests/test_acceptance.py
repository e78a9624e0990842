"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (5-8) share one pipeline run over the synthetic
corpus (4 species + host, 1000 reads/class, 2% substitutions, k=3) using
``tests/data/acceptance.ini``; criterion 8 needs more than 1000 training
reads per class and gets its own, larger corpus.
"""

import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from gradsuite import OP_CASES, end_to_end_error, op_error
from test_evaluation import brute_force_accuracy

from mgnet import tensorkit as tk
from mgnet.cli import main
from mgnet.config import PipelineConfig
from mgnet.coograph import CooccurrenceGraph, f_s
from mgnet.evaluation import hungarian_align, kmeans, macro_f1
from mgnet.kmer import KmerStream
from mgnet.model import finetune_classifier, fuse_attention, predict
from mgnet.pipeline import ORDER, Pipeline, subsample_per_class
from mgnet.pseudoimage import pgm_bytes, render_read

HERE = Path(__file__).parent
ACCEPTANCE_INI = HERE / "data" / "acceptance.ini"


def read_tsv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    cfg = PipelineConfig.load(ACCEPTANCE_INI, {"pipeline.workdir": str(tmp_path_factory.mktemp("acceptance") / "work")})
    pipe = Pipeline(cfg)
    start = time.perf_counter()
    pipe.run_all(ORDER)
    elapsed = time.perf_counter() - start
    return pipe, elapsed


# -- 1 ----------------------------------------------------------------------


def test_criterion_1_gradients(record_criterion):
    start = time.perf_counter()
    op_errors = {name: op_error(name) for name in OP_CASES}
    e2e = end_to_end_error()
    elapsed = time.perf_counter() - start
    worst = max(op_errors, key=op_errors.get)
    ok = max(op_errors.values()) < 1e-4 and e2e < 1e-3 and elapsed < 120
    record_criterion(
        1, ok, f"{len(op_errors)} ops, worst {worst} rel err {op_errors[worst]:.1e} (<1e-4); "
        f"end-to-end {e2e:.1e} (<1e-3); {elapsed:.1f}s (<120s)"
    )
    assert ok


# -- 2 ----------------------------------------------------------------------


def test_criterion_2_edge_weights(record_criterion):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        k = int(rng.integers(1, 3))
        ids = rng.integers(0, 4**k, int(rng.integers(0, 25)))
        g = CooccurrenceGraph(k)
        for a, b in zip(ids[:-1], ids[1:]):
            g.observe_pair(int(a), int(b))
        oracle = Counter(zip(ids[:-1].tolist(), ids[1:].tolist()))
        got = {key: (e.count, e.weight) for key, e in g.edges.items()}
        want = {
            key: (c, 1.0 if c == 1 else 2 * math.sqrt(max(c - 2, 1)) + (min(c - 3, 2) + 2))
            for key, c in oracle.items()
        }
        mismatches += got != want
    spots = [f_s(1), f_s(2), f_s(5)]
    ok = mismatches == 0 and spots == [3.0, 4.0, 8.0]
    record_criterion(2, ok, f"{mismatches} mismatching streams of 1000; f_s(1,2,5) = {spots}")
    assert ok


# -- 3 ----------------------------------------------------------------------


GOLDENS = {
    "worked_abab_c": [0, 1, 0, 1, 2],
    "single_pair": [3, 2],
    "self_loops": [0, 0, 0, 0, 3, 3, 0],
}


def test_criterion_3_pseudo_images(record_criterion):
    exact = {
        name: pgm_bytes(render_read(KmerStream("r", np.array(ids), 1, 1))) == (HERE / "golden" / f"{name}.pgm").read_bytes()
        for name, ids in GOLDENS.items()
    }
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        k = int(rng.integers(1, 4))
        ids = rng.integers(0, 4**k, int(rng.integers(2, 300)))
        px = render_read(KmerStream("r", ids, k, 1)).pixels
        slack = abs(px.sum() / 255 - 1) / (np.count_nonzero(px) / 510)
        worst = max(worst, slack)
    ok = all(exact.values()) and worst <= 1.0 + 1e-12
    record_criterion(3, ok, f"goldens byte-exact {exact}; worst normalisation slack {worst:.3f} of nnz/510")
    assert ok


# -- 4 ----------------------------------------------------------------------


def test_criterion_4_uniform_attention_identity(record_criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        b, d, h = int(rng.integers(1, 5)), int(rng.integers(1, 130)), int(rng.integers(1, 5))
        x_g = rng.normal(size=(b, d)) * 10
        x_lc = np.broadcast_to(rng.normal(size=(b, d, 1, 1)) * 10, (b, d, h, h)).copy()
        out = fuse_attention(tk.Tensor(x_g), tk.Tensor(x_lc)).data
        worst = max(worst, float(np.abs(out - x_g).max()))
    ok = worst <= 1e-9
    record_criterion(4, ok, f"max |X^MG - X^g| = {worst:.1e} over 200 uniform maps (<=1e-9)")
    assert ok


# -- 5 ----------------------------------------------------------------------


def test_criterion_5_end_to_end(pipeline_run, record_criterion):
    pipe, elapsed = pipeline_run
    rows = read_tsv(pipe.stage_dir("evaluate") / "metrics.tsv")
    macro = float(next(r for r in rows if r["class"] == "macro")["f1"])
    train = (pipe.stage_dir("finetune") / "train_ids.txt").read_text().split()
    manifest = read_tsv(pipe.manifest_path)
    per_class = Counter(r["label"] for r in manifest if r["read_id"] in set(train))
    corpus = Counter(r["label"] for r in manifest)
    ok = macro >= 0.80 and elapsed < 30 * 60 and set(per_class.values()) == {100} and set(corpus.values()) == {1000}
    record_criterion(
        5, ok, f"macro F1 {macro:.4f} (>=0.80) on held-out test split, {len(corpus)} classes x 1000 reads, "
        f"100 labels/class; pipeline {elapsed / 60:.1f} min (<30)"
    )
    assert ok


# -- 6 ----------------------------------------------------------------------


def test_criterion_6_ablation_order(pipeline_run, record_criterion):
    pipe, _ = pipeline_run
    pipe.run("ablate")
    f1 = {r["variant"]: float(r["f1"]) for r in read_tsv(pipe.stage_dir("ablate") / "metrics.tsv")}
    full, late, ae = f1["mgnet"], f1["late-fusion"], f1["autoencoder-only"]
    ok = full >= late >= ae and full - ae >= 0.03
    record_criterion(
        6, ok, f"macro F1 full {full:.4f} >= late-fusion {late:.4f} >= autoencoder-only {ae:.4f}; "
        f"full - AE = {full - ae:.4f} (>=0.03); structural-only {f1['structural-only']:.4f}"
    )
    assert ok


# -- 7 ----------------------------------------------------------------------


def test_criterion_7_zero_label(pipeline_run, record_criterion):
    pipe, _ = pipeline_run
    pipe.run("cluster-eval")
    m = {r["metric"]: float(r["value"]) for r in read_tsv(pipe.stage_dir("cluster-eval") / "metrics.tsv")}
    rng = np.random.default_rng(7)
    disagreements = 0
    for _ in range(200):
        n_clusters, n_classes = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        assign = rng.integers(0, n_clusters, 30).tolist()
        labels = rng.integers(0, n_classes, 30).tolist()
        disagreements += not np.isclose(hungarian_align(assign, labels)[1], brute_force_accuracy(assign, labels))
    ok = m["aligned_accuracy"] >= 1.5 * m["chance"] and disagreements == 0
    record_criterion(
        7, ok, f"aligned accuracy {m['aligned_accuracy']:.4f} = {m['ratio_to_chance']:.2f}x chance {m['chance']:.4f} "
        f"(>=1.5x); Hungarian vs brute force: {disagreements}/200 disagreements"
    )
    assert ok


# -- 8 ----------------------------------------------------------------------


LABEL_BUDGETS = (25, 100, 500, 1000)


def test_criterion_8_label_budget_trend(tmp_path_factory, record_criterion):
    workdir = tmp_path_factory.mktemp("labels") / "work"
    cfg = PipelineConfig.load(ACCEPTANCE_INI, {"pipeline.workdir": str(workdir), "synth.reads_per_species": 1500})
    pipe = Pipeline(cfg)
    pipe.run_all(("synth", "graph", "embed", "render", "pretrain", "features"))
    ids, feats = pipe.feature_matrix("mgnet")
    train_rows, train_labels = pipe.split_rows(ids, "train")
    test_rows, test_labels = pipe.split_rows(ids, "test")
    assert min(Counter(train_labels).values()) >= max(LABEL_BUDGETS)
    model_cfg = cfg.model_config()
    means = []
    for budget in LABEL_BUDGETS:
        scores = []
        for seed in range(3):
            rows, labs = subsample_per_class(train_rows, train_labels, budget, seed)
            clf = finetune_classifier(feats[rows], labs, type(model_cfg)(**{**model_cfg.__dict__, "seed": seed}))
            pred, _ = predict(feats[test_rows], clf)
            scores.append(macro_f1(test_labels, pred))
        means.append(float(np.mean(scores)))
    ok = all(b >= a - 0.02 for a, b in zip(means, means[1:]))
    trend = " -> ".join(f"{n}:{m:.4f}" for n, m in zip(LABEL_BUDGETS, means))
    record_criterion(8, ok, f"mean macro F1 over 3 seeds by labels/class {trend}; nondecreasing within 0.02")
    assert ok


# -- 9 ----------------------------------------------------------------------


DETERMINISM_INI = """\
[pipeline]
k = 3
stride = 3
image_size = 16
[synth]
reads_per_species = 60
[embed]
dims = 16
walks_per_node = 3
walk_length = 20
[model]
encoder_channels = 4,8,8,16
epochs_pretrain = 2
lr = 0.5
epochs_finetune = 5
finetune_lr = 0.05
hidden_sizes = 32,32
"""


def test_criterion_9_determinism(tmp_path, monkeypatch, record_criterion):
    conf = tmp_path / "det.ini"
    conf.write_text(DETERMINISM_INI)
    trees = []
    for run in ("first", "second"):
        root = tmp_path / run
        root.mkdir()
        monkeypatch.chdir(root)
        for command in ("all", "cluster-eval", "ablate"):
            assert main([command, "--config", str(conf), "--workdir", "work", "--seed", "11", "-q"]) == 0
        work = root / "work"
        trees.append({str(p.relative_to(work)): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()})
    same_names = trees[0].keys() == trees[1].keys()
    differing = [k for k in trees[0] if trees[1].get(k) != trees[0][k]]
    ok = same_names and not differing and len(trees[0]) > 20
    record_criterion(9, ok, f"{len(trees[0])} artifacts across all stages, {len(differing)} differ between two seeded runs")
    assert ok
