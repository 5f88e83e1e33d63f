"""Binary field snapshots.

Layout (little-endian)::

    b"LSDF" | u32 version=1 | u32 d | u32 N | f64 L | N^d x (f64 re, f64 im)

values in row-major order.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import Grid

MAGIC = b"LSDF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


class SnapshotError(ValueError):
    pass


def write_field(path, grid: Grid, f: np.ndarray) -> None:
    f = grid.check(f)
    if f.shape != grid.shape:
        raise ValueError("snapshots hold a single field, not a batch")
    payload = np.ascontiguousarray(f, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.d, grid.n, grid.length))
        fh.write(payload)


def read_field(path) -> tuple[Grid, np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header")
    magic, version, d, n, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {version}")
    grid = Grid(d, n, length)
    body = data[_HEADER.size:]
    if len(body) != 16 * grid.size:
        raise SnapshotError(f"{path}: expected {grid.size} values, found {len(body) / 16:g}")
    f = np.frombuffer(body, dtype="<c16").astype(complex).reshape(grid.shape)
    return grid, f
