"""Per-read pseudo-images from relative k-mer co-occurrence.

Pixel ``(i, j)`` of a read's image is ``round(255 * c(i, j) / N)`` where
``c(i, j)`` counts how often k-mer ``j`` directly follows k-mer ``i`` in the
read's strided k-mer stream and ``N`` is the total number of such pairs.
Counts not strictly above ``lambda_min`` are zeroed. Rounding is half-up.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .kmer import KmerStream


@dataclass(eq=False)
class PseudoImage:
    read_id: str
    pixels: np.ndarray  # (side, side) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError("pseudo-image must be a square 2-D grid")
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValueError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = px

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PseudoImage):
            return NotImplemented
        return self.read_id == other.read_id and np.array_equal(self.pixels, other.pixels)


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def pair_counts(stream: KmerStream) -> dict[tuple[int, int], int]:
    pairs = stream.pairs()
    if len(pairs) == 0:
        return {}
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return {(int(a), int(b)): int(c) for (a, b), c in zip(uniq, counts)}


def render_read(stream: KmerStream, lambda_min: float = 0.0) -> PseudoImage:
    if lambda_min < 0:
        raise ConfigError("lambda_min must be >= 0")
    side = 4**stream.k
    pixels = np.zeros((side, side), dtype=np.uint8)
    pairs = stream.pairs()
    if len(pairs):
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        total = counts.sum()
        keep = counts > lambda_min
        vals = round_half_up(255.0 * counts[keep] / total)
        pixels[uniq[keep, 0], uniq[keep, 1]] = vals.astype(np.uint8)
    return PseudoImage(stream.read_id, pixels)


def to_three_channel(img: PseudoImage) -> np.ndarray:
    """``(3, side, side)`` float array with the grey plane copied into each channel."""
    plane = img.pixels.astype(np.float64)
    return np.repeat(plane[None, :, :], 3, axis=0)


def downscale(img: PseudoImage, target: int) -> PseudoImage:
    """Block-average to ``target x target``.

    Blocks follow ``floor(i * side / target)`` boundaries, which reduces to
    equal blocks when ``target`` divides ``side``.
    """
    side = img.side
    if target < 1 or target > side:
        raise ConfigError(f"cannot downscale a {side}x{side} image to {target}x{target}")
    if target == side:
        return PseudoImage(img.read_id, img.pixels.copy())
    px = img.pixels.astype(np.float64)
    if side % target == 0:
        f = side // target
        out = px.reshape(target, f, target, f).mean(axis=(1, 3))
    else:
        edges = (np.arange(target + 1) * side) // target
        sums = np.add.reduceat(np.add.reduceat(px, edges[:-1], axis=0), edges[:-1], axis=1)
        sizes = np.diff(edges)
        out = sums / np.outer(sizes, sizes)
    return PseudoImage(img.read_id, np.clip(round_half_up(out), 0, 255).astype(np.uint8))


def render_scaled(stream: KmerStream, image_size: int, lambda_min: float = 0.0) -> PseudoImage:
    """Render and downscale in one go; avoids keeping a full-size image per read."""
    img = render_read(stream, lambda_min)
    if img.side == image_size:
        return img
    return downscale(img, image_size)


def pgm_bytes(img: PseudoImage) -> bytes:
    header = f"P5\n{img.side} {img.side}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(img.pixels, dtype=np.uint8).tobytes()


def write_pgm(img: PseudoImage, path) -> None:
    Path(path).write_bytes(pgm_bytes(img))


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path, read_id=None) -> PseudoImage:
    data = Path(path).read_bytes()
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
    except IndexError:
        raise ParseError("truncated PGM header", path=str(path)) from None
    if magic != b"P5" or int(maxval) != 255:
        raise ParseError("only binary P5 PGM with maxval 255 is supported", path=str(path))
    w, h = int(w), int(h)
    body = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos)
    if read_id is None:
        read_id = Path(path).stem
    return PseudoImage(read_id, body.reshape(h, w).copy())


def safe_name(read_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.+" else "_" for c in read_id) or "read"


def write_batch(images, outdir) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    names = []
    for img in images:
        name = safe_name(img.read_id) + ".pgm"
        write_pgm(img, os.path.join(outdir, name))
        names.append(name)
    return names
