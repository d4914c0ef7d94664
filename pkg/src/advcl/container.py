"""Flat binary container: JSON header followed by float64 blocks.

Layout::

    b"ADVCL\\x00\\x01\\x00"          8-byte magic
    uint64 little-endian          header length in bytes
    UTF-8 JSON header             {"meta": {...}, "blocks": [{"name", "shape"}, ...]}
    float64 little-endian blocks  in header order, row-major

Used for model checkpoints and replay-memory dumps.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, LengthError

MAGIC = b"ADVCL\x00\x01\x00"
_LE_F64 = np.dtype("<f8")


def write_container(path, meta: dict, blocks: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "meta": meta,
        "blocks": [{"name": name, "shape": list(np.shape(arr))} for name, arr in blocks],
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for _, arr in blocks:
            f.write(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())


def read_container(path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise FormatError(f"bad container magic {buf[:8]!r}")
    if len(buf) < 16:
        raise LengthError("container truncated inside the header length")
    (n,) = struct.unpack("<Q", buf[8:16])
    if len(buf) < 16 + n:
        raise LengthError("container truncated inside the JSON header")
    header = json.loads(buf[16:16 + n].decode("utf-8"))
    offset = 16 + n
    blocks = []
    for entry in header["blocks"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(buf):
            raise LengthError(f"block {entry['name']!r} runs past end of file")
        arr = np.frombuffer(buf, dtype=_LE_F64, count=count, offset=offset)
        blocks.append((entry["name"], arr.astype(np.float64).reshape(shape)))
        offset = end
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after last block")
    return header["meta"], blocks
