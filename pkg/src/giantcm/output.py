"""Serialization of time series and density matrices.

Binary density-matrix files (little-endian) hold::

    magic      8 bytes  b"GCMDM001"
    n_dims     uint32
    dims       n_dims x uint32
    count      uint64
    times      count x float64
    data       count x d x d x 2 float64, row-major, (re, im) interleaved
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError

MAGIC = b"GCMDM001"


def fmt(x) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
    return path


def write_states(path, dims: Sequence[int], times: Sequence[float], states) -> Path:
    dims = [int(d) for d in dims]
    d = int(np.prod(dims))
    mats = [np.asarray(getattr(s, "data", s), dtype=np.complex128) for s in states]
    if len(mats) != len(times):
        raise InvalidArgumentError("need one time per state")
    if any(m.shape != (d, d) for m in mats):
        raise InvalidArgumentError("state shape does not match dims")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(struct.pack("<Q", len(mats)))
        fh.write(np.asarray(times, dtype="<f8").tobytes())
        for m in mats:
            fh.write(np.ascontiguousarray(m).view("<f8").tobytes())
    return Path(path)


def read_states(path):
    """(dims, times, array of shape (count, d, d))."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise InvalidArgumentError("not a density-matrix file")
    off = 8
    (nd,) = struct.unpack_from("<I", raw, off)
    off += 4
    dims = list(struct.unpack_from(f"<{nd}I", raw, off))
    off += 4 * nd
    (count,) = struct.unpack_from("<Q", raw, off)
    off += 8
    times = np.frombuffer(raw, "<f8", count, off).copy()
    off += 8 * count
    d = int(np.prod(dims))
    data = np.frombuffer(raw, "<f8", count * d * d * 2, off).copy().view(np.complex128)
    return dims, times, data.reshape(count, d, d)
