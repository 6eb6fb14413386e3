"""Flat binary checkpoint container: versioned JSON header + raw arrays.

Layout: magic line, one JSON header line listing metadata and parameter
entries (name, shape, dtype), then the arrays' row-major bytes concatenated
in header order.  Writing is byte-deterministic for identical inputs and
round-trips float64 losslessly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"DUALSTYLE-CKPT\n"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
        })
        blobs.append(arr.tobytes())
    header = {
        "version": VERSION,
        "meta": meta or {},
        "params": entries,
    }
    header_line = json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header_line.encode("utf-8"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a dualstyle checkpoint")
        header = json.loads(fh.readline().decode("utf-8"))
        if header["version"] != VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        arrays = {}
        for entry in header["params"]:
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * dtype.itemsize)
            arrays[entry["name"]] = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
    return arrays, header["meta"]


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
