"""Backend selection for the coupled Monte Carlo kernel.

The compiled extension is used when it imports and the model names a kernel
it knows; otherwise the numpy route in :mod:`sampledsde.integrators` runs.
"""

from __future__ import annotations

import numpy as np

from .integrators import FluctuationCoefficients, coupled_metrics_batch
from .models import SystemModel
from .timegrid import TimeGrid

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

HAVE_COMPILED = _ckernels is not None
DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "python"
BACKENDS = ("auto", "compiled", "python")


def resolve_backend(model: SystemModel, backend: str = "auto") -> str:
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {backend!r}")
    supported = HAVE_COMPILED and model.kernel in _ckernels.KINDS
    if backend == "compiled":
        if not supported:
            raise RuntimeError(f"no compiled kernel available for model {model.name!r}")
        return "compiled"
    if backend == "auto" and supported:
        return "compiled"
    return "python"


def coupled_paths(model: SystemModel, grid: TimeGrid, x0, epsilon: float, dW: np.ndarray,
                  x_limit: np.ndarray, coef: FluctuationCoefficients | None,
                  backend: str = "auto"):
    """Per-path ``(lln_sup, clt_sup, terminal)``; see ``coupled_metrics_batch``."""
    if resolve_backend(model, backend) == "python":
        return coupled_metrics_batch(model, grid, x0, epsilon, dW, x_limit, coef)
    with_z = coef is not None
    return _ckernels.coupled_paths(
        model.kernel, dict(model.params),
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(grid.steps, dtype=float),
        np.ascontiguousarray(grid.sample_index, dtype=np.intp),
        np.ascontiguousarray(dW, dtype=float),
        float(epsilon),
        np.ascontiguousarray(x_limit, dtype=float),
        coef.A if with_z else None,
        coef.b if with_z else None,
        coef.S if with_z else None,
        with_z,
    )
