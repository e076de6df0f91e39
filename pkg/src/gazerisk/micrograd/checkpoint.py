"""Binary checkpoint container.

Layout::

    b"GZCK"                      magic
    uint32 LE                    format version
    uint64 LE                    header length in bytes
    header                       UTF-8 JSON manifest
    payload                      float64 little-endian tensors, back to back

The manifest lists every tensor as ``{"name", "shape", "offset"}`` (offset
into the payload, in bytes) and carries a free-form ``meta`` object.
Normalisation statistics are ordinary tensors whose names start with
``norm/``. Tensors are written in name order so identical content gives
identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"GZCK"
FORMAT_VERSION = 1
NORM_PREFIX = "norm/"


class CheckpointError(ValueError):
    pass


def encode(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "tensors": entries, "meta": meta or {}},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(header)) + header + b"".join(chunks)


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", blob[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    payload = memoryview(blob)[16 + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8", count=count)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)
    return tensors, header.get("meta", {})


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(encode(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(blob)
