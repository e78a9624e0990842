"""Pipeline stages, their on-disk artifacts and completion markers.

Every stage writes into ``<workdir>/<stage>/`` and finishes by writing a
``COMPLETE`` marker holding a digest of everything the stage consumed: its
configuration keys, the markers of the stages it read from, and the bytes of
any external input files. Re-running a stage whose digest is unchanged is a
no-op; a stage whose upstream marker is missing fails with
:class:`MissingDependencyError` naming that upstream stage.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from . import tensorkit as tk
from .config import PipelineConfig
from .coograph import build_global_graph, read_edges, write_edges
from .embed import node2vec, pool_many, read_embeddings, write_embeddings
from .errors import ConfigError, MissingDependencyError
from .evaluation import (
    ConfusionMatrix,
    apply_mapping,
    hungarian_align,
    kmeans,
    macro_average,
    precision_recall_f1,
    write_confusion,
    write_metrics,
)
from .kmer import extract_kmers
from .model import (
    MGNet,
    Classifier,
    encoder_gap,
    finetune_classifier,
    fused_features,
    predict,
    pretrain,
)
from .pseudoimage import read_pgm, render_scaled, safe_name, write_pgm
from .seqio import filter_by_mean_quality, parse_reads
from .synth import generate_corpus, read_manifest, write_corpus

log = logging.getLogger("mgnet")

MARKER = "COMPLETE"

READ_KEYS = ("pipeline.min_quality", "pipeline.k", "pipeline.stride")
PRETRAIN_KEYS = (
    "pipeline.seed",
    "pipeline.image_size",
    "embed.dims",
    "model.encoder_channels",
    "model.epochs_pretrain",
    "model.batch_size",
    "model.lr",
)
FINETUNE_KEYS = (
    "pipeline.seed",
    "model.hidden_sizes",
    "model.epochs_finetune",
    "model.batch_size",
    "model.lr",
    "model.finetune_lr",
    "model.standardize",
    "finetune.labels_per_class",
)

# stage -> (upstream stages, config keys that influence its output)
STAGES: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "synth": ((), ("pipeline.seed",) + tuple(f"synth.{k}" for k in (
        "n_species", "genome_length", "motif_length", "motifs_per_species", "read_length",
        "reads_per_species", "substitution_rate", "host_fraction", "motif_fraction",
        "split_train", "split_val", "split_test"))),
    "graph": (("@reads",), READ_KEYS),
    "embed": (("graph",), ("pipeline.seed", "pipeline.k") + tuple(f"embed.{k}" for k in (
        "walks_per_node", "walk_length", "return_p", "inout_q", "window", "negatives", "dims",
        "epochs", "learning_rate", "batch_pairs"))),
    "render": (("@reads",), READ_KEYS + ("pipeline.lambda_min", "pipeline.image_size")),
    "pretrain": (("render", "embed"), PRETRAIN_KEYS),
    "features": (("@checkpoint", "embed", "render"), ()),
    "finetune": (("features", "@labels"), FINETUNE_KEYS),
    "evaluate": (("finetune", "features", "@labels"), ()),
    "cluster-eval": (("features", "@labels"), ("pipeline.seed", "cluster.n_clusters")),
    "ablate": (("features", "render", "@labels"), PRETRAIN_KEYS + FINETUNE_KEYS),
}
ORDER = ("synth", "graph", "embed", "render", "pretrain", "features", "finetune", "evaluate")


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_log(history, path) -> None:
    with open(path, "w", newline="\n") as out:
        out.write("epoch,mean_loss\n")
        for epoch, loss in enumerate(history, start=1):
            out.write(f"{epoch},{loss!r}\n")


def write_lines(lines, path) -> None:
    with open(path, "w", newline="\n") as out:
        for line in lines:
            out.write(f"{line}\n")


def read_lines(path) -> list[str]:
    with open(path) as handle:
        return [line.rstrip("\n") for line in handle]


class Pipeline:
    """Runs stages against one resolved :class:`PipelineConfig`."""

    def __init__(self, cfg: PipelineConfig, force: bool = False):
        self.cfg = cfg
        self.force = force
        self.workdir = cfg.workdir
        self._reads = None

    # -- paths & markers ------------------------------------------------------

    def stage_dir(self, stage: str) -> Path:
        return self.workdir / stage

    def marker(self, stage: str) -> Path:
        return self.stage_dir(stage) / MARKER

    def is_complete(self, stage: str) -> bool:
        return self.marker(stage).is_file()

    def require(self, stage: str, detail: str = "") -> str:
        if not self.is_complete(stage):
            raise MissingDependencyError(stage, detail)
        return self.marker(stage).read_text().strip()

    @property
    def reads_external(self) -> bool:
        return bool(self.cfg["pipeline"]["input"])

    @property
    def manifest_path(self) -> Path:
        given = self.cfg["pipeline"]["manifest"]
        return Path(given) if given else self.stage_dir("synth") / "manifest.tsv"

    @property
    def checkpoint_path(self) -> Path:
        given = self.cfg["pipeline"]["checkpoint"]
        return Path(given) if given else self.stage_dir("pretrain") / "model.ckpt"

    def _source_digest(self, source: str) -> dict:
        if source == "@reads":
            if self.reads_external:
                files = self.cfg["pipeline"]["input"]
                for f in files:
                    if not Path(f).is_file():
                        raise ConfigError(f"input file not found: {f}")
                return {f"input:{i}": _sha256_file(f) for i, f in enumerate(files)}
            return {"synth": self.require("synth", "no --input given, so reads come from the synthetic corpus")}
        if source == "@labels":
            if self.cfg["pipeline"]["manifest"]:
                if not self.manifest_path.is_file():
                    raise ConfigError(f"manifest not found: {self.manifest_path}")
                return {"manifest": _sha256_file(self.manifest_path)}
            if self.reads_external:
                raise ConfigError("labelled stages need pipeline.manifest when reads come from --input")
            return {"synth": self.require("synth", "labels come from the synthetic manifest")}
        if source == "@checkpoint":
            if self.cfg["pipeline"]["checkpoint"] and self.checkpoint_path.is_file():
                return {"checkpoint": _sha256_file(self.checkpoint_path)}
            return {"pretrain": self.require("pretrain")}
        return {source: self.require(source)}

    def digest(self, stage: str) -> str:
        upstream, keys = STAGES[stage]
        payload = {"stage": stage, "config": {k: repr(self.cfg.get(k)) for k in keys}, "upstream": {}}
        for src in upstream:
            payload["upstream"].update(self._source_digest(src))
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def run(self, stage: str) -> bool:
        """Run ``stage`` unless it is already complete for the same inputs. Returns True if it ran."""
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}")
        digest = self.digest(stage)
        marker = self.marker(stage)
        if not self.force and marker.is_file() and marker.read_text().strip() == digest:
            log.info("%s: up to date, skipping", stage)
            return False
        out = self.stage_dir(stage)
        out.mkdir(parents=True, exist_ok=True)
        if marker.exists():
            marker.unlink()
        log.info("%s: running", stage)
        getattr(self, "stage_" + stage.replace("-", "_"))(out)
        marker.write_text(digest + "\n")
        return True

    def run_all(self, stages=ORDER) -> None:
        for stage in stages:
            if stage == "synth" and self.reads_external:
                continue
            self.run(stage)

    # -- shared loaders ---------------------------------------------------------

    def read_paths(self) -> list[Path]:
        if self.reads_external:
            return [Path(p) for p in self.cfg["pipeline"]["input"]]
        return [self.stage_dir("synth") / "reads.fasta"]

    def reads(self):
        """Quality-filtered reads in input order (cached)."""
        if self._reads is None:
            reads = []
            for path in self.read_paths():
                reads.extend(filter_by_mean_quality(parse_reads(path), self.cfg["pipeline"]["min_quality"]))
            seen = set()
            for r in reads:
                if r.id in seen:
                    raise ConfigError(f"duplicate read id {r.id!r} in input")
                seen.add(r.id)
            if not reads:
                raise ConfigError("no reads left after quality filtering")
            self._reads = reads
        return self._reads

    def streams(self):
        p = self.cfg["pipeline"]
        return [extract_kmers(r, p["k"], p["stride"]) for r in self.reads()]

    def labels(self) -> dict[str, tuple[str, str]]:
        return {rid: (label, split) for rid, label, split in read_manifest(self.manifest_path)}

    def embeddings(self):
        return read_embeddings(self.stage_dir("embed") / "embeddings.txt")

    def images(self) -> tuple[list[str], np.ndarray]:
        d = self.stage_dir("render")
        ids = read_lines(d / "ids.txt")
        names = read_lines(d / "files.txt")
        side = self.cfg["pipeline"]["image_size"]
        stack = np.zeros((len(ids), side, side), dtype=np.uint8)
        for i, name in enumerate(names):
            stack[i] = read_pgm(d / "pgm" / name).pixels
        return ids, stack

    def global_features(self, ids: list[str]) -> np.ndarray:
        by_id = {s.read_id: s for s in self.streams()}
        missing = [rid for rid in ids if rid not in by_id]
        if missing:
            raise ConfigError(f"rendered read {missing[0]!r} not found in the current input; re-run `render`")
        return pool_many([by_id[rid] for rid in ids], self.embeddings())

    def feature_matrix(self, name: str) -> tuple[list[str], np.ndarray]:
        d = self.stage_dir("features")
        return read_lines(d / "ids.txt"), np.load(d / f"{name}.npy")

    def split_rows(self, ids: list[str], split: str) -> tuple[np.ndarray, list[str]]:
        labels = self.labels()
        rows, labs = [], []
        for i, rid in enumerate(ids):
            if rid in labels and labels[rid][1] == split:
                rows.append(i)
                labs.append(labels[rid][0])
        return np.array(rows, dtype=np.int64), labs

    def training_rows(self, ids: list[str]) -> tuple[np.ndarray, list[str]]:
        rows, labs = self.split_rows(ids, "train")
        if len(rows) == 0:
            raise ConfigError("no labelled training reads (manifest split 'train') among the features")
        return subsample_per_class(rows, labs, self.cfg["finetune"]["labels_per_class"], self.cfg.seed)

    # -- stages -------------------------------------------------------------------

    def stage_synth(self, out: Path) -> None:
        corpus = generate_corpus(self.cfg.synth_spec())
        write_corpus(corpus, out, self.cfg.split_fractions, seed=self.cfg.seed)
        log.info("synth: %d reads, classes %s", len(corpus), sorted(set(corpus.labels)))

    def stage_graph(self, out: Path) -> None:
        graph = build_global_graph(self.streams(), k=self.cfg["pipeline"]["k"])
        write_edges(graph, out / "edges.tsv")
        log.info("graph: %d nodes, %d edges", len(graph.nodes()), len(graph))

    def stage_embed(self, out: Path) -> None:
        graph = read_edges(self.stage_dir("graph") / "edges.tsv", self.cfg["pipeline"]["k"])
        if len(graph) == 0:
            raise ConfigError("the global graph has no edges; reads are shorter than two k-mers")
        history: list = []
        table = node2vec(graph, self.cfg.walk_config(), history=history)
        write_embeddings(table, out / "embeddings.txt")
        log.info("embed: %d vectors, final batch loss %.4f", len(table), history[-1] if history else float("nan"))

    def stage_render(self, out: Path) -> None:
        p = self.cfg["pipeline"]
        pgm = out / "pgm"
        pgm.mkdir(exist_ok=True)
        for old in pgm.glob("*.pgm"):
            old.unlink()
        ids, names, used = [], [], set()
        for stream in self.streams():
            name = safe_name(stream.read_id) + ".pgm"
            if name in used:
                raise ConfigError(f"read ids collide after filename sanitising: {stream.read_id!r}")
            used.add(name)
            write_pgm(render_scaled(stream, p["image_size"], p["lambda_min"]), pgm / name)
            ids.append(stream.read_id)
            names.append(name)
        write_lines(ids, out / "ids.txt")
        write_lines(names, out / "files.txt")
        log.info("render: %d pseudo-images at %dx%d", len(ids), p["image_size"], p["image_size"])

    def stage_pretrain(self, out: Path) -> None:
        ids, images = self.images()
        x_g = self.global_features(ids)
        model, history = pretrain(images, x_g, self.cfg.model_config(),
                                  log=lambda e, loss: log.info("pretrain epoch %d: mse %.6g", e, loss))
        self.checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
        tk.save_checkpoint(model.params, self.checkpoint_path)
        write_log(history, out / "log.csv")

    def load_pretrained(self, mode: str = "mgnet", path=None) -> MGNet:
        path = Path(path) if path is not None else self.checkpoint_path
        if not path.is_file():
            raise MissingDependencyError("pretrain", f"checkpoint {path} not found")
        model = MGNet(self.cfg.model_config(), mode)
        model.load_state(tk.load_checkpoint(path))
        return model

    def stage_features(self, out: Path) -> None:
        ids, images = self.images()
        x_g = self.global_features(ids)
        model = self.load_pretrained()
        write_lines(ids, out / "ids.txt")
        np.save(out / "mgnet.npy", fused_features(model, images, x_g))
        np.save(out / "global.npy", x_g)
        np.save(out / "gap.npy", encoder_gap(model, images))

    def _fit(self, features: np.ndarray, ids: list[str]) -> Classifier:
        rows, labs = self.training_rows(ids)
        return finetune_classifier(features[rows], labs, self.cfg.model_config())

    def stage_finetune(self, out: Path) -> None:
        ids, feats = self.feature_matrix("mgnet")
        rows, labs = self.training_rows(ids)
        clf = finetune_classifier(feats[rows], labs, self.cfg.model_config())
        save_classifier(clf, out)
        write_log(clf.history, out / "log.csv")
        write_lines([ids[i] for i in rows], out / "train_ids.txt")
        log.info("finetune: %d labelled reads, final loss %.4f", len(rows), clf.history[-1] if clf.history else float("nan"))

    def _test_metrics(self, clf: Classifier, features: np.ndarray, ids: list[str]):
        rows, truth = self.split_rows(ids, "test")
        if len(rows) == 0:
            raise ConfigError("no reads in the manifest's 'test' split")
        pred, scores = predict(features[rows], clf)
        classes = sorted(set(truth) | set(clf.classes))
        cm = ConfusionMatrix.from_labels(truth, pred, classes)
        return rows, truth, pred, scores, cm

    def stage_evaluate(self, out: Path) -> None:
        clf = load_classifier(self.stage_dir("finetune"))
        ids, feats = self.feature_matrix("mgnet")
        rows, truth, pred, scores, cm = self._test_metrics(clf, feats, ids)
        metrics = precision_recall_f1(cm)
        write_metrics(metrics, out / "metrics.tsv")
        write_confusion(cm, out / "confusion.tsv")
        with open(out / "predictions.tsv", "w", newline="\n") as handle:
            handle.write("read_id\tlabel\tpredicted\tscore\n")
            for r, t, p, s in zip(rows.tolist(), truth, pred, scores.max(axis=1)):
                handle.write(f"{ids[r]}\t{t}\t{p}\t{s:.6f}\n")
        log.info("evaluate: macro F1 %.4f on %d test reads", macro_average(metrics)[2], len(rows))

    def stage_cluster_eval(self, out: Path) -> None:
        ids, feats = self.feature_matrix("mgnet")
        labels = self.labels()
        rows = np.array([i for i, rid in enumerate(ids) if rid in labels], dtype=np.int64)
        if len(rows) == 0:
            raise ConfigError("no labelled reads to evaluate clustering against")
        truth = [labels[ids[i]][0] for i in rows]
        classes = sorted(set(truth))
        k = self.cfg["cluster"]["n_clusters"] or len(classes)
        assign = kmeans(feats[rows], k, seed=self.cfg.seed)
        mapping, acc = hungarian_align(assign, truth)
        chance = max(truth.count(c) for c in classes) / len(truth)
        write_lines(
            [
                "metric\tvalue",
                f"aligned_accuracy\t{acc:.6f}",
                f"chance\t{chance:.6f}",
                f"ratio_to_chance\t{acc / chance:.6f}",
                f"n_clusters\t{k}",
                f"n_reads\t{len(rows)}",
            ],
            out / "metrics.tsv",
        )
        write_lines(["cluster\tlabel"] + [f"{c}\t{mapping[c] if mapping[c] is not None else '-'}" for c in sorted(mapping)],
                    out / "mapping.tsv")
        predicted = apply_mapping(assign, mapping)
        write_confusion(ConfusionMatrix.from_labels(truth, [p or "-" for p in predicted]), out / "confusion.tsv")
        log.info("cluster-eval: aligned accuracy %.4f (chance %.4f)", acc, chance)

    def stage_ablate(self, out: Path) -> None:
        ids, images = self.images()
        feat_ids, mg = self.feature_matrix("mgnet")
        if feat_ids != ids:
            raise MissingDependencyError("features", "feature rows do not match the rendered images")
        _, x_g = self.feature_matrix("global")
        ae, history = pretrain(images, None, self.cfg.model_config(), mode="autoencoder",
                               log=lambda e, loss: log.info("ablate autoencoder epoch %d: mse %.6g", e, loss))
        tk.save_checkpoint(ae.params, out / "autoencoder.ckpt")
        write_log(history, out / "autoencoder_log.csv")
        gap = encoder_gap(ae, images)
        variants = ablation_features(mg, x_g, gap)
        rows_out = ["variant\tprecision\trecall\tf1"]
        for name, feats in variants.items():
            clf = self._fit(feats, ids)
            *_, cm = self._test_metrics(clf, feats, ids)
            p, r, f = macro_average(precision_recall_f1(cm))
            rows_out.append(f"{name}\t{p:.6f}\t{r:.6f}\t{f:.6f}")
            log.info("ablate %s: macro F1 %.4f", name, f)
        write_lines(rows_out, out / "metrics.tsv")


def ablation_features(mgnet: np.ndarray, x_g: np.ndarray, gap_autoencoder: np.ndarray) -> dict[str, np.ndarray]:
    """The four compared feature sets, in report order."""
    return {
        "autoencoder-only": gap_autoencoder,
        "late-fusion": np.concatenate([gap_autoencoder, x_g], axis=1),
        "structural-only": x_g,
        "mgnet": mgnet,
    }


def subsample_per_class(rows: np.ndarray, labels: list[str], per_class: int, seed: int):
    """Keep at most ``per_class`` rows of each label (all if 0); deterministic in ``seed``."""
    if per_class <= 0:
        return rows, list(labels)
    labels_arr = np.array(labels)
    keep = []
    for ci, cls in enumerate(sorted(set(labels))):
        members = np.flatnonzero(labels_arr == cls)
        if len(members) > per_class:
            rng = np.random.default_rng([seed, 7, ci])
            members = np.sort(rng.choice(members, per_class, replace=False))
        keep.extend(members.tolist())
    keep = np.sort(np.array(keep, dtype=np.int64))
    return rows[keep], [labels[i] for i in keep]


def save_classifier(clf: Classifier, outdir: Path) -> None:
    params = list(clf.params) + [tk.Parameter(clf.mean, "norm.mean"), tk.Parameter(clf.std, "norm.std")]
    tk.save_checkpoint(params, outdir / "classifier.ckpt")
    write_lines([str(c) for c in clf.classes], outdir / "classes.txt")


def load_classifier(indir: Path) -> Classifier:
    state = tk.load_checkpoint(indir / "classifier.ckpt")
    classes = read_lines(indir / "classes.txt")
    mean, std = state.pop("norm.mean"), state.pop("norm.std")
    n_layers = len(state) // 2
    params = []
    for i in range(n_layers):
        params.append(tk.Parameter(state[f"fc{i}.weight"], f"fc{i}.weight"))
        params.append(tk.Parameter(state[f"fc{i}.bias"], f"fc{i}.bias"))
    return Classifier(classes, params, mean, std)

