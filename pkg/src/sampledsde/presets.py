"""Built-in experiments and the table builders shared by every CLI verb.

Everything here returns tables as ``{file name: (columns, rows)}`` and never
touches the file system, so a caller can aggregate first and write once.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .config import ExperimentConfig
from .experiment import (
    ErrorSummary,
    fit_rate,
    fluctuation_terminal_samples,
    linear_oracle_moments,
    run_cell,
)
from .integrators import SimulationConfig, simulate_coupled
from .models import SystemModel, make_model
from .noise import generate_path

Tables = dict  # file name -> (columns, rows)

# Pendulum sweep: T = 25, delta = 2^-4, dt = 25/256 (about 0.0977, so T is a
# whole number of steps), x(0) = X(0) = (1, 0), Z(0) = 0, 1000 paths and
# epsilon = 2^-i for i = 1..10.
PENDULUM_HORIZON = 25.0
PENDULUM_DELTA = 2.0 ** -4
PENDULUM_DT = 25.0 / 256.0
PENDULUM_X0 = (1.0, 0.0)
PENDULUM_PATHS = 1000
PENDULUM_EPSILONS = tuple(2.0 ** -i for i in range(1, 11))
PENDULUM_TRAJECTORY_EPSILONS = (2.0 ** -5, 2.0 ** -3)
PENDULUM_GRID_MODE = "grid-snap"
DEFAULT_SEED = 2024

# Scalar linear oracle: a = 2, k = 1, sigma = 1, c = 1, delta = epsilon, T = 1.
LINEAR_A = 2.0
LINEAR_K = 1.0
LINEAR_SIGMA = 1.0
LINEAR_C = 1.0
LINEAR_HORIZON = 1.0
LINEAR_X0 = (1.0,)
ORACLE_DT = 1e-3
ORACLE_EPSILON = 2.0 ** -6
ORACLE_PATHS = 10_000
# The rate sweep needs dt far below the smallest epsilon: the hold lag of a
# discretized sample-and-hold leaves a bias of order dt/epsilon in Z.
RATE_DT = 2.0 ** -15
RATE_EPSILONS = tuple(2.0 ** -i for i in range(2, 9))
RATE_PATHS = 2000


def pendulum_sweep_config(n_paths: int = PENDULUM_PATHS, seed: int = DEFAULT_SEED,
                          threads: int = 1, grid_mode: str = PENDULUM_GRID_MODE,
                          out_dir: str = "out") -> ExperimentConfig:
    sim = SimulationConfig(epsilon=PENDULUM_EPSILONS[0], delta=PENDULUM_DELTA,
                           horizon=PENDULUM_HORIZON, dt=PENDULUM_DT, x0=PENDULUM_X0,
                           grid_mode=grid_mode)
    return ExperimentConfig(
        model_name="pendulum", model_params={}, simulation=sim,
        cells=[(e, PENDULUM_DELTA) for e in PENDULUM_EPSILONS],
        n_paths=n_paths, seed=seed, threads=threads, out_dir=out_dir,
        per_cell_c=True)


def linear_rate_config(n_paths: int = RATE_PATHS, seed: int = DEFAULT_SEED,
                       threads: int = 1, grid_mode: str = "union",
                       out_dir: str = "out") -> ExperimentConfig:
    sim = SimulationConfig(epsilon=RATE_EPSILONS[0], delta=RATE_EPSILONS[0],
                           horizon=LINEAR_HORIZON, dt=RATE_DT, x0=LINEAR_X0,
                           regime_c=LINEAR_C, grid_mode=grid_mode)
    return ExperimentConfig(
        model_name="scalar_linear",
        model_params={"a": LINEAR_A, "k": LINEAR_K, "sigma": LINEAR_SIGMA},
        simulation=sim, cells=[(e, e) for e in RATE_EPSILONS],
        n_paths=n_paths, seed=seed, threads=threads, out_dir=out_dir,
        tables=("summaries", "ratefit"))


def summaries_table(summaries: list[ErrorSummary]):
    if not summaries:
        raise ValueError("no summaries to tabulate")
    return summaries[0].columns(), [s.row() for s in summaries]


RATEFIT_COLUMNS = ["metric", "slope", "intercept", "r_squared", "n_points"]


def ratefit_table(summaries: list[ErrorSummary]):
    """Log2-log2 slopes against epsilon for every metric with two usable cells.

    Cells whose value is not a positive finite number are left out of the fit.
    """
    metrics = [("lln_sup_p1", lambda s: s.lln_sup_p1),
               ("lln_sup_p2", lambda s: s.lln_sup_p2),
               ("clt_sup", lambda s: s.clt_sup)]
    for j in range(len(summaries[0].term_err)):
        metrics.append((f"term_err_{j + 1}", lambda s, j=j: s.term_err[j]))
    rows = []
    for name, get in metrics:
        pts = [(s.epsilon, get(s)) for s in summaries
               if math.isfinite(get(s)) and get(s) > 0]
        if len(pts) < 2:
            continue
        fit = fit_rate(pts)
        rows.append([name, fit.slope, fit.intercept, fit.r_squared, len(pts)])
    return RATEFIT_COLUMNS, rows


def trajectory_table(model: SystemModel, config: SimulationConfig, seed: int, path_id: int):
    """One coupled path, one row per grid node.

    ``Z_j`` is the limiting fluctuation process; it is nan when the cell has no
    finite regime constant, and so is ``err_j``.
    """
    grid = config.grid()
    path = generate_path(grid, model.state_dim, seed, path_id)
    bundle = simulate_coupled(model, config, path, rescaled=False, sampled_ode=False)
    n = model.state_dim
    Z = bundle.z_limit if bundle.z_limit is not None else np.full((grid.n_nodes, n), np.nan)
    err = bundle.x_sde - bundle.x_limit - config.epsilon * Z
    columns = (["t"] + [f"X_{j}" for j in range(1, n + 1)]
               + [f"x_{j}" for j in range(1, n + 1)]
               + [f"Z_{j}" for j in range(1, n + 1)]
               + [f"err_{j}" for j in range(1, n + 1)])
    data = np.column_stack([grid.nodes, bundle.x_sde, bundle.x_limit, Z, err])
    return columns, [[float(v) for v in row] for row in data]


def trajectory_filename(index: int, epsilon: float) -> str:
    return f"trajectories_{index:02d}_eps_{epsilon!r}.csv"


def run_experiment(cfg: ExperimentConfig, trajectory_epsilons=None, backend: str = "auto",
                   progress=None) -> Tables:
    """Run every cell of ``cfg`` and build the tables it asks for.

    ``trajectory_epsilons=None`` writes a trajectory file for every cell,
    otherwise only for cells whose epsilon is listed. ``progress`` receives
    one status line per finished cell.
    """
    model = make_model(cfg.model_name, **cfg.model_params)
    cells = cfg.cell_configs()
    summaries = []
    for i, sim in enumerate(cells):
        summary = run_cell(model, sim, cfg.n_paths, cfg.seed, clt=sim.epsilon > 0,
                           threads=cfg.threads, backend=backend)
        summaries.append(summary)
        if progress is not None:
            progress(f"cell {i + 1}/{len(cells)}: epsilon={sim.epsilon!r} delta={sim.delta!r} "
                     f"diverged={summary.n_diverged}/{summary.n_paths}")
    tables: Tables = {}
    if "summaries" in cfg.tables:
        tables["summaries.csv"] = summaries_table(summaries)
    if "ratefit" in cfg.tables:
        tables["ratefit.csv"] = ratefit_table(summaries)
    if "trajectories" in cfg.tables:
        for i, sim in enumerate(cells):
            if trajectory_epsilons is not None and sim.epsilon not in trajectory_epsilons:
                continue
            tables[trajectory_filename(i, sim.epsilon)] = trajectory_table(
                model, sim, cfg.seed, cfg.trajectory_path_id)
    return tables


def pendulum_sweep(n_paths: int = PENDULUM_PATHS, seed: int = DEFAULT_SEED, threads: int = 1,
                   grid_mode: str = PENDULUM_GRID_MODE, backend: str = "auto",
                   progress=None) -> Tables:
    cfg = pendulum_sweep_config(n_paths, seed, threads, grid_mode)
    return run_experiment(cfg, trajectory_epsilons=PENDULUM_TRAJECTORY_EPSILONS,
                          backend=backend, progress=progress)


ORACLE_COLUMNS = ["quantity", "estimate", "se", "exact", "z_score"]


def oracle_table(n_paths: int = ORACLE_PATHS, seed: int = DEFAULT_SEED,
                 grid_mode: str = "union"):
    """Monte Carlo mean and variance of ``Z_T`` against the closed forms.

    The standard error of the variance is the normal-theory value
    ``var * sqrt(2 / (N - 1))``.
    """
    model = make_model("scalar_linear", a=LINEAR_A, k=LINEAR_K, sigma=LINEAR_SIGMA)
    sim = SimulationConfig(epsilon=ORACLE_EPSILON, delta=ORACLE_EPSILON,
                           horizon=LINEAR_HORIZON, dt=ORACLE_DT, x0=LINEAR_X0,
                           regime_c=LINEAR_C, grid_mode=grid_mode)
    z = fluctuation_terminal_samples(model, sim, n_paths, seed)[:, 0]
    _, mean_exact, var_exact = linear_oracle_moments(
        LINEAR_A, LINEAR_K, LINEAR_C, LINEAR_SIGMA, LINEAR_HORIZON, LINEAR_X0[0])
    n = len(z)
    mean = math.fsum(z.tolist()) / n
    var = math.fsum(((z - mean) ** 2).tolist()) / (n - 1)
    mean_se = math.sqrt(var / n)
    var_se = var * math.sqrt(2.0 / (n - 1))
    rows = [["mean_Z_T", mean, mean_se, mean_exact, (mean - mean_exact) / mean_se],
            ["var_Z_T", var, var_se, var_exact, (var - var_exact) / var_se]]
    return ORACLE_COLUMNS, rows


def linear_oracle(n_paths: int | None = None, seed: int = DEFAULT_SEED, threads: int = 1,
                  grid_mode: str = "union", backend: str = "auto", progress=None) -> Tables:
    """Closed-form check of ``Z_T`` plus the ``delta = epsilon`` rate sweep.

    ``n_paths`` overrides the path count of both parts.
    """
    tables: Tables = {"oracle.csv": oracle_table(n_paths or ORACLE_PATHS, seed, grid_mode)}
    if progress is not None:
        progress("oracle moments done")
    cfg = linear_rate_config(n_paths or RATE_PATHS, seed, threads, grid_mode)
    tables.update(run_experiment(cfg, backend=backend, progress=progress))
    return tables


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    """Copy of ``cfg`` with the non-None entries of ``changes`` applied.

    ``grid_mode`` goes to the simulation block; everything else is a field of
    the experiment config.
    """
    changes = {k: v for k, v in changes.items() if v is not None}
    grid_mode = changes.pop("grid_mode", None)
    if grid_mode is not None:
        changes["simulation"] = dataclasses.replace(cfg.simulation, grid_mode=grid_mode)
    return dataclasses.replace(cfg, **changes)

