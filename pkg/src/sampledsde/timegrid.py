"""Sampling operator and integration grids containing the sample instants."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRID_MODES = ("union", "grid-snap")
DEFAULT_MAX_NODES = 50_000_000
MERGE_RTOL = 1e-12


class GridResourceError(MemoryError):
    pass


def pi_delta(t: float, delta: float) -> float:
    """Most recent sample instant ``delta * floor(t / delta)``.

    Computed as the largest ``fl(q * delta) <= t`` over integers ``q`` so that
    rounding in ``t / delta`` can never push the result past ``t``; this also
    makes the operator exactly idempotent in floating point.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    q = math.floor(t / delta)
    while q > 0 and q * delta > t:
        q -= 1
    while (q + 1) * delta <= t:
        q += 1
    return q * delta


def pi_delta_array(t, delta: float) -> np.ndarray:
    """Vectorized :func:`pi_delta`."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    t = np.asarray(t, dtype=float)
    q = np.floor(t / delta)
    q = np.where((q > 0) & (q * delta > t), q - 1, q)
    q = np.where((q + 1) * delta <= t, q + 1, q)
    return q * delta


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Immutable integration grid.

    ``sample_index[i]`` is the node whose state is held (fed to the control
    law) while stepping from node ``i`` to ``i + 1``.
    """

    nodes: np.ndarray
    sample_index: np.ndarray
    delta: float
    horizon: float
    mode: str

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.sample_index.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_steps(self) -> int:
        return len(self.nodes) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return (self.mode == other.mode and self.delta == other.delta
                and self.horizon == other.horizon
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.sample_index, other.sample_index))

    __hash__ = None


def _count_check(count: int, max_nodes: int):
    if count > max_nodes:
        raise GridResourceError(f"grid would have {count} nodes, cap is {max_nodes}")


def build_grid(horizon: float, dt: float, delta: float, mode: str = "union",
               max_nodes: int = DEFAULT_MAX_NODES) -> TimeGrid:
    """Build a grid on ``[0, horizon]`` with base step ``dt``.

    ``union`` merges the uniform nodes with every sample instant ``j * delta``
    so held values are exact computed states. ``grid-snap`` keeps the uniform
    grid and holds the state at the last node not after ``pi_delta(t)``.
    The horizon is always the final node.
    """
    if dt <= 0 or delta <= 0:
        raise ValueError(f"dt and delta must be positive, got dt={dt}, delta={delta}")
    if horizon <= 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if delta > horizon:
        raise ValueError(f"delta={delta} exceeds horizon={horizon}")
    if mode not in GRID_MODES:
        raise ValueError(f"mode must be one of {GRID_MODES}, got {mode!r}")
    tol = MERGE_RTOL * horizon

    n_uniform = math.floor(horizon / dt) + 2
    _count_check(n_uniform, max_nodes)
    uniform = np.arange(n_uniform, dtype=float) * dt
    uniform = uniform[uniform < horizon - tol]

    if mode == "union":
        n_samples = math.floor(horizon / delta) + 2
        _count_check(n_uniform + n_samples, max_nodes)
        samples = np.arange(n_samples, dtype=float) * delta
        samples = samples[samples <= horizon + tol]
        if abs(samples[-1] - horizon) <= tol:
            samples[-1] = horizon
        # sample instants win ties so that they stay exact
        extra = np.concatenate([uniform, [horizon]])
        pos = np.searchsorted(samples, extra)
        near = np.zeros(len(extra), dtype=bool)
        for shift in (-1, 0):
            idx = np.clip(pos + shift, 0, len(samples) - 1)
            near |= np.abs(samples[idx] - extra) <= tol
        nodes = np.union1d(samples, extra[~near])
        is_sample = np.isin(nodes, samples)
        sample_index = np.maximum.accumulate(
            np.where(is_sample, np.arange(len(nodes)), 0))
    else:
        nodes = np.concatenate([uniform, [horizon]])
        held_time = pi_delta_array(nodes, delta)
        sample_index = np.searchsorted(nodes, held_time + tol, side="right") - 1

    _count_check(len(nodes), max_nodes)
    return TimeGrid(nodes=nodes, sample_index=sample_index.astype(np.intp),
                    delta=float(delta), horizon=float(horizon), mode=mode)
