"""Keyed Brownian increments.

Each path draws from its own Philox stream keyed by ``(seed, path_id)``; draws
are consumed in row-major ``(step, component)`` order. Paths therefore never
depend on how many other paths exist or in which order they are produced.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .timegrid import TimeGrid

_MASK64 = (1 << 64) - 1
DUMP_MAGIC = b"SDEBWINC"
_HEADER = struct.Struct("<8sQQQ")  # magic, dim, step count, seed


def path_rng(seed: int, path_id: int) -> np.random.Generator:
    if path_id < 0:
        raise ValueError("path_id must be nonnegative")
    key = (int(seed) & _MASK64) | ((int(path_id) & _MASK64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_increments(n_steps: int, dim: int, seed: int, path_id: int) -> np.ndarray:
    """Unit-variance normals of shape ``(n_steps, dim)`` for one path."""
    return path_rng(seed, path_id).standard_normal((n_steps, dim))


@dataclass(frozen=True, eq=False)
class BrownianPath:
    increments: np.ndarray  # (n_steps, dim)
    grid: TimeGrid
    seed: int
    path_id: int

    def __post_init__(self):
        self.increments.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.increments.shape[1]

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]

    def values(self) -> np.ndarray:
        """Brownian motion at every grid node, starting from zero."""
        w = np.zeros((self.n_steps + 1, self.dim))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w


def generate_path(grid: TimeGrid, dim: int, seed: int, path_id: int) -> BrownianPath:
    if dim < 1:
        raise ValueError("dim must be >= 1")
    z = standard_increments(grid.n_steps, dim, seed, path_id)
    dw = z * np.sqrt(grid.steps)[:, None]
    return BrownianPath(increments=dw, grid=grid, seed=int(seed), path_id=int(path_id))


def generate_batch(grid: TimeGrid, dim: int, seed: int, path_ids) -> np.ndarray:
    """Increments for several paths, shape ``(n_paths, n_steps, dim)``.

    ``out[p]`` equals ``generate_path(grid, dim, seed, path_ids[p]).increments``.
    """
    path_ids = list(path_ids)
    out = np.empty((len(path_ids), grid.n_steps, dim))
    sqrt_h = np.sqrt(grid.steps)[:, None]
    for p, pid in enumerate(path_ids):
        path_rng(seed, pid).standard_normal((grid.n_steps, dim), out=out[p])
        out[p] *= sqrt_h
    return out


def increment_between(path: BrownianPath, i: int) -> np.ndarray:
    if not 0 <= i < path.n_steps:
        raise IndexError(f"step index {i} out of range [0, {path.n_steps})")
    return path.increments[i].copy()


def dump_increments(path: BrownianPath, target) -> None:
    """Write a 32-byte little-endian header then float64 increments, row-major."""
    header = _HEADER.pack(DUMP_MAGIC, path.dim, path.n_steps, int(path.seed) & _MASK64)
    data = np.ascontiguousarray(path.increments, dtype="<f8").tobytes()
    Path(target).write_bytes(header + data)


def load_increments(source) -> tuple[np.ndarray, int]:
    """Read a dump written by :func:`dump_increments`; returns ``(increments, seed)``."""
    raw = Path(source).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for increment header")
    magic, dim, n_steps, seed = _HEADER.unpack_from(raw)
    if magic != DUMP_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    expected = _HEADER.size + 8 * dim * n_steps
    if len(raw) != expected:
        raise ValueError(f"expected {expected} bytes, found {len(raw)}")
    inc = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n_steps, dim)
    return inc.astype(float), seed
