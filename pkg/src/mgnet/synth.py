"""Synthetic metagenome corpora with planted species signatures.

Each species gets a random genome in which short species-unique motifs are
interleaved with random background. An optional host "species" has a longer
genome and no motifs. Reads are uniform substrings with i.i.d. substitution
errors. All randomness derives from ``SynthSpec.seed``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .seqio import SequenceRead, write_fasta

BASES = np.array(list("ACGT"))
HOST_LABEL = "host"
HOST_GENOME_FACTOR = 4
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthSpec:
    n_species: int = 4
    genome_length: int = 20000
    motif_length: int = 12
    motifs_per_species: int = 6
    read_length: int = 300
    reads_per_species: int = 1000
    substitution_rate: float = 0.02
    host_fraction: float = 0.2
    motif_fraction: float = 0.5
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if self.n_species < 0:
            out.append("n_species must be >= 0")
        if self.n_species > 0 and self.motifs_per_species < 1:
            out.append("motifs_per_species must be >= 1")
        if self.motif_length < 1:
            out.append("motif_length must be >= 1")
        if self.read_length < 1 or self.read_length > self.genome_length:
            out.append("read_length must be in [1, genome_length]")
        if self.reads_per_species < 0:
            out.append("reads_per_species must be >= 0")
        if not 0.0 <= self.substitution_rate < 1.0:
            out.append("substitution_rate must be in [0, 1)")
        if not 0.0 <= self.host_fraction <= 1.0:
            out.append("host_fraction must be in [0, 1]")
        elif self.host_fraction == 1.0 and self.n_species * self.reads_per_species > 0:
            out.append("host_fraction=1 leaves no room for species reads")
        if not 0.0 <= self.motif_fraction <= 1.0:
            out.append("motif_fraction must be in [0, 1]")
        n_motifs = self.n_species * self.motifs_per_species
        if n_motifs > 4**self.motif_length // 2:
            out.append("too many motifs for the motif length to keep them unique")
        return out

    def validate(self) -> "SynthSpec":
        problems = self.violations()
        if problems:
            raise ConfigError("invalid synthetic spec: " + "; ".join(problems))
        return self

    @property
    def host_reads(self) -> int:
        if self.host_fraction <= 0:
            return 0
        species_total = self.n_species * self.reads_per_species
        return int(round(self.host_fraction * species_total / (1.0 - self.host_fraction)))

    @property
    def labels(self) -> list[str]:
        names = [f"species_{i}" for i in range(self.n_species)]
        if self.host_reads:
            names.append(HOST_LABEL)
        return names


@dataclass
class Corpus:
    reads: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    genomes: dict = field(default_factory=dict)
    motifs: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.reads)


def _random_seq(rng, n) -> str:
    return "".join(BASES[rng.integers(0, 4, n)])


def _species_genome(rng, motifs, length, motif_fraction, chunk) -> str:
    parts, total = [], 0
    while total < length:
        if motifs and rng.random() < motif_fraction:
            piece = motifs[rng.integers(len(motifs))]
        else:
            piece = _random_seq(rng, chunk)
        parts.append(piece)
        total += len(piece)
    return "".join(parts)[:length]


def mutate(rng, seq: str, rate: float) -> str:
    if rate <= 0:
        return seq
    arr = np.frombuffer(seq.encode("ascii"), dtype=np.uint8).copy()
    hits = np.flatnonzero(rng.random(len(arr)) < rate)
    if len(hits):
        lookup = {ord(b): i for i, b in enumerate("ACGT")}
        idx = np.array([lookup[c] for c in arr[hits]])
        shift = rng.integers(1, 4, len(hits))
        arr[hits] = np.frombuffer("ACGT".encode(), dtype=np.uint8)[(idx + shift) % 4]
    return arr.tobytes().decode("ascii")


def sample_reads(rng, genome: str, label: str, n: int, read_length: int, rate: float) -> list[SequenceRead]:
    starts = rng.integers(0, len(genome) - read_length + 1, n)
    return [
        SequenceRead(f"{label}_{j:06d}", mutate(rng, genome[s : s + read_length], rate))
        for j, s in enumerate(starts)
    ]


def generate_corpus(spec: SynthSpec) -> Corpus:
    spec.validate()
    corpus = Corpus()
    motif_rng = np.random.default_rng([spec.seed, 0])
    used: set[str] = set()
    for i in range(spec.n_species):
        motifs = []
        while len(motifs) < spec.motifs_per_species:
            m = _random_seq(motif_rng, spec.motif_length)
            if m not in used:
                used.add(m)
                motifs.append(m)
        corpus.motifs[f"species_{i}"] = motifs
    for i in range(spec.n_species):
        label = f"species_{i}"
        rng = np.random.default_rng([spec.seed, 1, i])
        genome = _species_genome(rng, corpus.motifs[label], spec.genome_length, spec.motif_fraction, spec.motif_length)
        corpus.genomes[label] = genome
        reads = sample_reads(rng, genome, label, spec.reads_per_species, spec.read_length, spec.substitution_rate)
        corpus.reads.extend(reads)
        corpus.labels.extend([label] * len(reads))
    if spec.host_reads:
        rng = np.random.default_rng([spec.seed, 2])
        genome = _random_seq(rng, spec.genome_length * HOST_GENOME_FACTOR)
        corpus.genomes[HOST_LABEL] = genome
        reads = sample_reads(rng, genome, HOST_LABEL, spec.host_reads, spec.read_length, spec.substitution_rate)
        corpus.reads.extend(reads)
        corpus.labels.extend([HOST_LABEL] * len(reads))
    return corpus


def _split_counts(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    # largest remainder; ties go to the earlier split
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def make_manifest(read_ids, labels, split_fractions=(0.7, 0.1, 0.2), seed: int = 0) -> list[tuple[str, str, str]]:
    """Stratified train/val/test assignment, rows ``(read_id, label, split)`` in input order."""
    fractions = tuple(float(f) for f in split_fractions)
    if len(fractions) != len(SPLITS) or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {split_fractions}")
    read_ids, labels = list(read_ids), list(labels)
    if len(read_ids) != len(labels):
        raise ConfigError("read_ids and labels differ in length")
    n_splits = sum(1 for f in fractions if f > 0)
    by_class: dict[str, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(lab, []).append(i)
    split_of = [""] * len(read_ids)
    for c_index, lab in enumerate(sorted(by_class)):
        members = by_class[lab]
        if len(members) < n_splits:
            raise ConfigError(f"class {lab!r} has {len(members)} samples, fewer than the {n_splits} non-empty splits")
        rng = np.random.default_rng([seed, 3, c_index])
        perm = [members[j] for j in rng.permutation(len(members))]
        pos = 0
        for name, cnt in zip(SPLITS, _split_counts(len(members), fractions)):
            for j in perm[pos : pos + cnt]:
                split_of[j] = name
            pos += cnt
    return list(zip(read_ids, labels, split_of))


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as out:
        writer = csv.writer(out, delimiter="\t", lineterminator="\n")
        writer.writerow(["read_id", "label", "split"])
        writer.writerows(rows)


def read_manifest(path) -> list[tuple[str, str, str]]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle, delimiter="\t")
        header = next(reader, None)
        if header != ["read_id", "label", "split"]:
            raise ConfigError(f"{path}: unexpected manifest header {header}")
        return [tuple(row) for row in reader if row]


def write_corpus(corpus: Corpus, outdir, split_fractions=(0.7, 0.1, 0.2), seed: int = 0) -> dict:
    os.makedirs(outdir, exist_ok=True)
    fasta = os.path.join(outdir, "reads.fasta")
    manifest = os.path.join(outdir, "manifest.tsv")
    write_fasta(corpus.reads, fasta)
    rows = make_manifest([r.id for r in corpus.reads], corpus.labels, split_fractions, seed) if corpus.reads else []
    write_manifest(rows, manifest)
    return {"fasta": fasta, "manifest": manifest}
