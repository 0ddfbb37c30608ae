"""Flat binary checkpoint container.

Layout::

    b"LACK"            4-byte magic
    uint32 LE          format version (1)
    uint64 LE          header length H
    H bytes            UTF-8 JSON header
    payload            concatenated little-endian float32 tensors

The header lists ``{"name", "shape", "dtype", "offset", "nbytes"}`` per tensor
(offsets relative to the payload start) plus a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MAGIC = b"LACK"
VERSION = 1
DTYPE = "<f4"


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE, "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    out = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(data[start : start + e["nbytes"]], dtype=e["dtype"]).reshape(e["shape"])
        out[e["name"]] = arr.astype(np.float32)
    return out, header.get("meta", {})
