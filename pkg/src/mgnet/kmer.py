"""Dense integer k-mer ids and strided k-mer extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EncodingError

MAX_K = 12
NUCLEOTIDES = "ACGT"

_CODE = np.full(256, -1, dtype=np.int64)
for _i, _b in enumerate(NUCLEOTIDES):
    _CODE[ord(_b)] = _i
    _CODE[ord(_b.lower())] = _i


def check_k(k: int) -> int:
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= MAX_K:
        raise ConfigError(f"k must be an integer in [1, {MAX_K}], got {k!r}")
    return int(k)


def node_count(k: int) -> int:
    return 4 ** check_k(k)


def encode_kmer(bases: str) -> int:
    """Base-4 big-endian code of a k-mer with A=0, C=1, G=2, T=3."""
    check_k(len(bases))
    value = 0
    for ch in bases:
        digit = NUCLEOTIDES.find(ch.upper())
        if digit < 0:
            raise EncodingError(f"cannot encode {bases!r}: {ch!r} is not one of ACGT")
        value = value * 4 + digit
    return value


def decode_kmer(value: int, k: int) -> str:
    check_k(k)
    if not 0 <= value < 4**k:
        raise EncodingError(f"k-mer id {value} out of range for k={k}")
    out = []
    for _ in range(k):
        value, digit = divmod(value, 4)
        out.append(NUCLEOTIDES[digit])
    return "".join(reversed(out))


@dataclass(eq=False)
class KmerStream:
    read_id: str
    ids: np.ndarray
    k: int
    s: int
    offsets: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.ids)

    def pairs(self) -> np.ndarray:
        """Consecutive (src, dst) id pairs as an ``(n-1, 2)`` array."""
        if len(self.ids) < 2:
            return np.empty((0, 2), dtype=np.int64)
        return np.stack([self.ids[:-1], self.ids[1:]], axis=1)


def extract_kmers(read, k: int, s: int) -> KmerStream:
    """Windows of length ``k`` starting at offsets 0, s, 2s, ...

    Windows that contain anything other than A/C/G/T are dropped; the
    surviving ids keep their left-to-right order. A read shorter than ``k``
    gives an empty stream.
    """
    check_k(k)
    if not isinstance(s, (int, np.integer)) or s < 1:
        raise ConfigError(f"stride must be a positive integer, got {s!r}")
    bases = read.bases if hasattr(read, "bases") else str(read)
    read_id = getattr(read, "id", "")
    n = len(bases)
    if n < k:
        empty = np.empty(0, dtype=np.int64)
        return KmerStream(read_id, empty, k, s, empty.copy())
    codes = _CODE[np.frombuffer(bases.encode("ascii"), dtype=np.uint8)]
    starts = np.arange(0, n - k + 1, s, dtype=np.int64)
    windows = codes[starts[:, None] + np.arange(k)]
    ok = (windows >= 0).all(axis=1)
    windows = windows[ok]
    weights = 4 ** np.arange(k - 1, -1, -1, dtype=np.int64)
    ids = windows @ weights if len(windows) else np.empty(0, dtype=np.int64)
    return KmerStream(read_id, ids.astype(np.int64), k, s, starts[ok])
