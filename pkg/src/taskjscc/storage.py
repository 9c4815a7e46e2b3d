"""Versioned binary containers for datasets and checkpoints, plus CSV output.

Container layout (all little-endian)::

    magic      8 bytes   b"TJSCCBIN"
    version    uint32
    hdr_len    uint64
    header     hdr_len bytes of UTF-8 JSON (sorted keys, compact)
    payload    float64 arrays back to back, in header order

The header carries ``kind``, free-form ``meta`` and the name/shape of each
array. Writing the same content twice produces identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TJSCCBIN"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_container(path, kind: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    entries = []
    blobs = []
    for name, arr in arrays:
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = _dumps({"kind": kind, "meta": meta, "arrays": entries}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def load_container(path, kind: str | None = None):
    """Return ``(kind, meta, arrays)`` with arrays as an ordered dict."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ContainerError(f"{path}: not a container (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported format version {version}")
    off = 8 + struct.calcsize("<IQ")
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, got {header['kind']!r}")
    off += hlen
    arrays = {}
    for e in header["arrays"]:
        n = math.prod(e["shape"])
        a = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(e["shape"])
        arrays[e["name"]] = a.astype(np.float64)
        off += 8 * n
    if off != len(data):
        raise ContainerError(f"{path}: trailing bytes after payload")
    return header["kind"], header["meta"], arrays


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


class CsvLog:
    """Append-only RFC 4180 CSV with a fixed column list."""

    def __init__(self, path, columns: list[str], fresh: bool = True):
        self.path = Path(path)
        self.columns = list(columns)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if fresh or not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.writer(f, lineterminator="\r\n").writerow(self.columns)

    def write(self, rows) -> None:
        with open(self.path, "a", newline="") as f:
            w = csv.writer(f, lineterminator="\r\n")
            for row in rows:
                w.writerow([fmt(row.get(c)) for c in self.columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
