"""Snapshot matrices and their on-disk formats.

Binary layout (little-endian)::

    b"MGSS" | u32 version=1 | u64 N | u64 n | N*n float64 (row-major) | N float64 times
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"MGSS"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass
class SnapshotMatrix:
    """``N`` time samples (rows) of an ``n``-dimensional state (columns)."""

    data: np.ndarray
    times: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.times = np.ascontiguousarray(self.times, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("snapshot data must be two-dimensional")
        if self.times.shape != (self.data.shape[0],):
            raise ValueError("one timestamp per row is required")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("snapshot data contains non-finite entries")

    @property
    def column_mean(self):
        return self.data.mean(axis=0)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_grid(self):
        return self.data.shape[1] - 2

    @property
    def g(self):
        return self.data[:, :-2]

    @property
    def phi(self):
        return self.data[:, -2]

    @property
    def psi(self):
        return self.data[:, -1]

    def save(self, path):
        path = Path(path)
        N, n = self.data.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, N, n))
            fh.write(self.data.astype("<f8", copy=False).tobytes(order="C"))
            fh.write(self.times.astype("<f8", copy=False).tobytes())
        return path

    @classmethod
    def load(cls, path):
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError(f"{path}: truncated snapshot header")
        magic, version, N, n = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a snapshot file (magic {magic!r})")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported snapshot version {version}")
        expected = _HEADER.size + 8 * (N * n + N)
        if len(raw) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
        off = _HEADER.size
        data = np.frombuffer(raw, dtype="<f8", count=N * n, offset=off).reshape(N, n)
        times = np.frombuffer(raw, dtype="<f8", count=N, offset=off + 8 * N * n)
        return cls(data.astype(np.float64), times.astype(np.float64))

    def csv_header(self):
        cols = ["t"] + [f"g{j:03d}" for j in range(self.n_grid)] + ["phi", "psi"]
        return ",".join(cols)

    def to_csv(self, path):
        table = np.column_stack([self.times, self.data])
        np.savetxt(path, table, delimiter=",", header=self.csv_header(), comments="", fmt="%.17g")
        return Path(path)

    @classmethod
    def from_csv(cls, path):
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(table[:, 1:], table[:, 0])


def stack(snapshots):
    """Concatenate the rows of several snapshot matrices."""
    return np.vstack([s.data if isinstance(s, SnapshotMatrix) else np.asarray(s) for s in snapshots])
