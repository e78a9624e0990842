"""Binary parameter checkpoints.

Layout (little-endian): ``b"MGNETCKP"``, uint32 version, uint32 count, then
per parameter: uint32 name length, UTF-8 name, uint32 ndim, ndim x uint32
dims, raw float64 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import ParseError
from .tensor import Parameter

MAGIC = b"MGNETCKP"
VERSION = 1


def checkpoint_bytes(params: Iterable[Parameter]) -> bytes:
    params = list(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names) or any(not n for n in names):
        raise ValueError("checkpoint parameters need unique, non-empty names")
    parts = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for p in params:
        raw = p.name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<I", p.data.ndim) + struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(params: Iterable[Parameter], path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params))


def parse_checkpoint(data: bytes) -> dict[str, np.ndarray]:
    if data[: len(MAGIC)] != MAGIC:
        raise ParseError("not an MG-Net checkpoint (bad magic)")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}")
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ParseError(f"truncated checkpoint: {exc}") from None
    if pos != len(data):
        raise ParseError("trailing bytes after last parameter")
    return out


def load_checkpoint(path) -> dict[str, np.ndarray]:
    return parse_checkpoint(Path(path).read_bytes())
