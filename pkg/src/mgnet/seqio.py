"""Streaming FASTA/FASTQ readers and the mean-quality read filter."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, TextIO

from .errors import ParseError

ALPHABET = frozenset("ACGTN")
PHRED_OFFSET = 33


@dataclass(frozen=True)
class SequenceRead:
    id: str
    bases: str
    quality: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        if not self.bases:
            raise ValueError(f"read {self.id!r} has no bases")
        bad = set(self.bases) - ALPHABET
        if bad:
            raise ValueError(f"read {self.id!r} has bases outside ACGTN: {''.join(sorted(bad))}")
        if self.quality is not None:
            if not isinstance(self.quality, tuple):
                object.__setattr__(self, "quality", tuple(self.quality))
            if len(self.quality) != len(self.bases):
                raise ValueError(
                    f"read {self.id!r}: {len(self.quality)} quality values for {len(self.bases)} bases"
                )
            if any(q < 0 for q in self.quality):
                raise ValueError(f"read {self.id!r} has negative quality scores")

    def __len__(self):
        return len(self.bases)

    @property
    def mean_quality(self) -> Optional[float]:
        if self.quality is None:
            return None
        return sum(self.quality) / len(self.quality)


def _make_read(rid, bases, quality, lineno, path):
    try:
        return SequenceRead(rid, bases, quality)
    except ValueError as exc:
        raise ParseError(str(exc), line=lineno, path=path) from None


def _header_id(line: str) -> str:
    # identifier is the first whitespace-delimited token after the marker
    fields = line[1:].split(None, 1)
    return fields[0] if fields else ""


def iter_fasta(handle: TextIO, path=None) -> Iterator[SequenceRead]:
    rid = None
    header_line = 0
    chunks: list[str] = []
    for lineno, raw in enumerate(handle, start=1):
        line = raw.strip()
        if not line:
            continue
        if line[0] == ">":
            if rid is not None:
                yield _make_read(rid, "".join(chunks), None, header_line, path)
            rid = _header_id(line)
            header_line = lineno
            chunks = []
        else:
            if rid is None:
                raise ParseError("sequence data before any '>' header", line=lineno, path=path)
            chunks.append(line.upper())
    if rid is not None:
        yield _make_read(rid, "".join(chunks), None, header_line, path)


def iter_fastq(handle: TextIO, path=None) -> Iterator[SequenceRead]:
    lines = enumerate(handle, start=1)
    for lineno, raw in lines:
        header = raw.rstrip("\r\n")
        if not header.strip():
            continue
        if header[0] != "@":
            raise ParseError("expected '@' record header", line=lineno, path=path)
        record = []
        for _ in range(3):
            nxt = next(lines, None)
            if nxt is None:
                raise ParseError("truncated FASTQ record", line=lineno, path=path)
            record.append(nxt[1].rstrip("\r\n"))
        bases, plus, qual = record
        if not plus.startswith("+"):
            raise ParseError("expected '+' separator line", line=lineno + 2, path=path)
        if len(qual) != len(bases):
            raise ParseError(
                f"{len(bases)} bases but {len(qual)} quality characters", line=lineno + 3, path=path
            )
        scores = tuple(ord(c) - PHRED_OFFSET for c in qual)
        yield _make_read(_header_id(header), bases.upper(), scores, lineno, path)


def parse_fasta(path) -> Iterator[SequenceRead]:
    """Yield reads from a FASTA file one record at a time.

    Multi-line sequences are joined and uppercased. A sequence line before
    the first header raises :class:`ParseError` carrying the line number.
    """
    with open(path) as handle:
        yield from iter_fasta(handle, path=os.fspath(path))


def parse_fastq(path) -> Iterator[SequenceRead]:
    """Yield reads from a 4-line FASTQ file with Phred+33 qualities."""
    with open(path) as handle:
        yield from iter_fastq(handle, path=os.fspath(path))


def sniff_format(path) -> str:
    with open(path) as handle:
        for line in handle:
            if line.strip():
                return "fastq" if line.lstrip().startswith("@") else "fasta"
    return "fasta"


def parse_reads(path) -> Iterator[SequenceRead]:
    if sniff_format(path) == "fastq":
        return parse_fastq(path)
    return parse_fasta(path)


def filter_by_mean_quality(reads: Iterable[SequenceRead], min_q: float) -> Iterator[SequenceRead]:
    """Keep reads whose mean Phred score is strictly above ``min_q``.

    Reads without qualities (FASTA input) are passed through untouched.
    """
    if min_q < 0:
        raise ValueError("min_q must be >= 0")
    for read in reads:
        mq = read.mean_quality
        if mq is None or mq > min_q:
            yield read


def format_fasta(reads: Iterable[SequenceRead], width: int = 0) -> Iterator[str]:
    for read in reads:
        yield f">{read.id}\n"
        if width and width > 0:
            for i in range(0, len(read.bases), width):
                yield read.bases[i : i + width] + "\n"
        else:
            yield read.bases + "\n"


def write_fasta(reads: Iterable[SequenceRead], path, width: int = 0) -> int:
    n = 0
    with open(path, "w", newline="\n") as out:
        for chunk in format_fasta(reads, width):
            if chunk[0] == ">":
                n += 1
            out.write(chunk)
    return n


def write_fastq(reads: Sequence[SequenceRead], path) -> int:
    n = 0
    with open(path, "w", newline="\n") as out:
        for read in reads:
            if read.quality is None:
                raise ValueError(f"read {read.id!r} has no quality scores")
            qual = "".join(chr(q + PHRED_OFFSET) for q in read.quality)
            out.write(f"@{read.id}\n{read.bases}\n+\n{qual}\n")
            n += 1
    return n
