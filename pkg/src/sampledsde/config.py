"""TOML experiment configuration.

Example::

    n_paths = 1000
    seed = 7

    [model]
    name = "pendulum"          # or "scalar_linear" with [model.params] a, k, sigma

    [simulation]
    epsilon = 0.03125
    delta = 0.0625
    horizon = 25.0
    dt = 0.09765625
    x0 = [1.0, 0.0]
    grid_mode = "grid-snap"    # default "union"
    regime_c = 0.5             # default: delta/epsilon of the first cell;
                               # "per-cell" or "inf" also accepted

    [sweep]
    epsilons = [0.5, 0.25]     # and/or pairs = [[eps, delta], ...]

    [outputs]
    directory = "out"
    tables = ["summaries", "ratefit", "trajectories"]
    trajectory_path_id = 0
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass

from .integrators import SimulationConfig
from .models import MODEL_REGISTRY, MODEL_STATE_DIM
from .timegrid import GRID_MODES

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    pass


TABLES = ("summaries", "ratefit", "trajectories")

_ALLOWED = {
    "": {"model", "simulation", "sweep", "outputs", "n_paths", "seed", "threads"},
    "model": {"name", "params"},
    "simulation": {"epsilon", "delta", "horizon", "dt", "x0", "regime_c", "grid_mode"},
    "sweep": {"epsilons", "pairs"},
    "outputs": {"directory", "tables", "trajectory_path_id"},
}
_REQUIRED = [
    "model.name", "simulation.epsilon", "simulation.delta", "simulation.horizon",
    "simulation.dt", "simulation.x0", "outputs.directory",
]


@dataclass
class ExperimentConfig:
    model_name: str
    model_params: dict
    simulation: SimulationConfig
    #: (epsilon, delta) per cell, in run order
    cells: list[tuple[float, float]]
    n_paths: int = 1000
    seed: int = 0
    threads: int = 1
    out_dir: str = "out"
    tables: tuple[str, ...] = TABLES
    trajectory_path_id: int = 0
    #: recompute c = delta/epsilon in every cell instead of fixing it
    per_cell_c: bool = False

    def cell_configs(self) -> list[SimulationConfig]:
        out = []
        for eps, delta in self.cells:
            changes = {"epsilon": eps, "delta": delta}
            if self.per_cell_c:
                changes["regime_c"] = None
            out.append(dataclasses.replace(self.simulation, **changes))
        return out


def _lookup(doc: dict, dotted: str):
    node = doc
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _number(doc, dotted, *, positive=False, nonnegative=False):
    value = _lookup(doc, dotted)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{dotted}: expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{dotted}: must be finite, got {value}")
    if positive and not value > 0:
        raise ConfigError(f"{dotted}: must be > 0, got {value}")
    if nonnegative and not value >= 0:
        raise ConfigError(f"{dotted}: must be >= 0, got {value}")
    return value


def _integer(doc, dotted, default, minimum):
    value = _lookup(doc, dotted)
    if value is None:
        return default
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{dotted}: expected an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{dotted}: must be >= {minimum}, got {value}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML document, applying defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None

    unknown = []
    for section, allowed in _ALLOWED.items():
        node = doc if section == "" else doc.get(section, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{section}: expected a table")
        for key in node:
            if key not in allowed:
                unknown.append(f"{section}.{key}" if section else key)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    missing = [k for k in _REQUIRED if _lookup(doc, k) is None]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    name = _lookup(doc, "model.name")
    if name not in MODEL_REGISTRY:
        raise ConfigError(f"model.name: unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    params = _lookup(doc, "model.params") or {}
    if not isinstance(params, dict):
        raise ConfigError("model.params: expected a table")
    for key, value in params.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"model.params.{key}: expected a number, got {value!r}")
    if name == "scalar_linear":
        missing = [k for k in ("a", "k") if k not in params]
        if missing:
            raise ConfigError(f"missing required keys: {', '.join('model.params.' + k for k in missing)}")
        extra = set(params) - {"a", "k", "sigma"}
        if extra:
            raise ConfigError(f"unknown keys: {', '.join(sorted('model.params.' + k for k in extra))}")
    elif params:
        raise ConfigError(f"unknown keys: {', '.join(sorted('model.params.' + k for k in params))}")

    eps = _number(doc, "simulation.epsilon", nonnegative=True)
    delta = _number(doc, "simulation.delta", positive=True)
    horizon = _number(doc, "simulation.horizon", positive=True)
    dt = _number(doc, "simulation.dt", positive=True)
    x0 = _lookup(doc, "simulation.x0")
    if not isinstance(x0, list) or not x0 or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in x0):
        raise ConfigError(f"simulation.x0: expected a nonempty list of numbers, got {x0!r}")
    dim = MODEL_STATE_DIM[name]
    if len(x0) != dim:
        raise ConfigError(f"simulation.x0: model {name!r} needs {dim} components, got {len(x0)}")
    grid_mode = _lookup(doc, "simulation.grid_mode") or "union"
    if grid_mode not in GRID_MODES:
        raise ConfigError(f"simulation.grid_mode: must be one of {GRID_MODES}, got {grid_mode!r}")

    cells = []
    eps_list = _lookup(doc, "sweep.epsilons")
    if eps_list is not None:
        if not isinstance(eps_list, list) or not eps_list:
            raise ConfigError("sweep.epsilons: expected a nonempty list")
        for i, value in enumerate(eps_list):
            cells.append((_sweep_value(value, f"sweep.epsilons[{i}]"), delta))
    pairs = _lookup(doc, "sweep.pairs")
    if pairs is not None:
        if not isinstance(pairs, list) or not pairs:
            raise ConfigError("sweep.pairs: expected a nonempty list of [epsilon, delta]")
        for i, pair in enumerate(pairs):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigError(f"sweep.pairs[{i}]: expected [epsilon, delta]")
            cells.append((_sweep_value(pair[0], f"sweep.pairs[{i}][0]"),
                          _sweep_value(pair[1], f"sweep.pairs[{i}][1]")))
    if not cells:
        cells = [(eps, delta)]

    per_cell = False
    raw_c = _lookup(doc, "simulation.regime_c")
    if raw_c is None:
        first_eps, first_delta = cells[0]
        regime_c = first_delta / first_eps if first_eps > 0 else None
    elif raw_c == "per-cell":
        regime_c, per_cell = None, True
    elif raw_c == "inf":
        regime_c = math.inf
    else:
        regime_c = _number(doc, "simulation.regime_c", nonnegative=True)

    try:
        simulation = SimulationConfig(epsilon=eps, delta=delta, horizon=horizon, dt=dt,
                                      x0=tuple(float(v) for v in x0), regime_c=regime_c,
                                      grid_mode=grid_mode)
    except ValueError as exc:
        raise ConfigError(f"simulation: {exc}") from None
    for _, d in cells:
        if d > horizon:
            raise ConfigError(f"sweep: delta={d} exceeds simulation.horizon={horizon}")

    tables = _lookup(doc, "outputs.tables")
    if tables is None:
        tables = list(TABLES)
    if not isinstance(tables, list) or any(t not in TABLES for t in tables):
        raise ConfigError(f"outputs.tables: expected a subset of {list(TABLES)}, got {tables!r}")
    out_dir = _lookup(doc, "outputs.directory")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("outputs.directory: expected a nonempty string")

    return ExperimentConfig(
        model_name=name, model_params=dict(params), simulation=simulation, cells=cells,
        n_paths=_integer(doc, "n_paths", 1000, 1), seed=_integer(doc, "seed", 0, 0),
        threads=_integer(doc, "threads", 1, 1), out_dir=out_dir, tables=tuple(tables),
        trajectory_path_id=_integer(doc, "outputs.trajectory_path_id", 0, 0),
        per_cell_c=per_cell,
    )


def _sweep_value(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{where}: must be a positive finite number, got {value}")
    return value
