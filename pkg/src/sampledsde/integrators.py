"""Euler-type solvers for the sampled SDE, the sampled ODE, the limiting ODE
and the limiting fluctuation SDE.

Stochastic solvers are vectorized over paths: state arrays have shape
``(n_nodes, n_paths, n)`` and increments ``(n_paths, n_steps, n)``. The
single-path functions are thin wrappers around the batched ones, so both
routes execute the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import SystemModel, eval_gdk
from .noise import BrownianPath
from .timegrid import GRID_MODES, TimeGrid, build_grid


class DivergenceError(ArithmeticError):
    def __init__(self, message: str, node: int):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of one ``(epsilon, delta)`` cell.

    ``regime_c=None`` means ``delta / epsilon`` (so the discrepancy
    ``kappa_eps`` is zero); ``math.inf`` classifies the cell as Regime 3.
    """

    epsilon: float
    delta: float
    horizon: float
    dt: float
    x0: tuple[float, ...]
    regime_c: float | None = None
    grid_mode: str = "union"
    #: "rk4" for standalone limit-ODE runs; coupled runs always use Euler
    limit_scheme: str = "rk4"
    max_nodes: int = 50_000_000

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        for name in ("delta", "dt", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.regime_c is not None and not self.regime_c >= 0:
            raise ValueError(f"regime_c must be >= 0, got {self.regime_c}")
        if self.grid_mode not in GRID_MODES:
            raise ValueError(f"grid_mode must be one of {GRID_MODES}")
        if self.limit_scheme not in ("rk4", "euler"):
            raise ValueError("limit_scheme must be 'rk4' or 'euler'")

    @property
    def c(self) -> float | None:
        if self.regime_c is not None:
            return float(self.regime_c)
        if self.epsilon > 0:
            return self.delta / self.epsilon
        return None

    @property
    def kappa_eps(self) -> float:
        """Discrepancy ``|delta/epsilon - c|``; nan when undefined."""
        c = self.c
        if self.epsilon == 0 or c is None or math.isinf(c):
            return math.nan
        return abs(self.delta / self.epsilon - c)

    @property
    def regime(self) -> int:
        c = self.c
        if c is None:
            return 0
        if c == 0:
            return 1
        return 3 if math.isinf(c) else 2

    def grid(self) -> TimeGrid:
        return build_grid(self.horizon, self.dt, self.delta, self.grid_mode,
                          max_nodes=self.max_nodes)


@dataclass
class TrajectoryBundle:
    grid: TimeGrid
    epsilon: float
    x_sde: np.ndarray
    x_limit: np.ndarray
    x_sampled_ode: np.ndarray | None = None
    z_limit: np.ndarray | None = None
    z_rescaled: np.ndarray | None = None
    #: (X - x) / delta, only for Regime 3 runs
    u_rescaled: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _matvec(mat, vec):
    return (mat @ vec[..., None])[..., 0]


def _first_bad_node(series: np.ndarray) -> int | None:
    bad = ~np.isfinite(series).reshape(len(series), -1).all(axis=1)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if len(idx) else None


def _raise_if_diverged(series: np.ndarray, what: str):
    node = _first_bad_node(series)
    if node is not None:
        raise DivergenceError(f"{what} became non-finite at node {node}", node)


def step_sampled_sde(model: SystemModel, state, held_sample, h: float, dW, epsilon: float,
                     index: int = 0):
    """One Euler-Maruyama step with the control law evaluated at the held sample.

    ``index`` is the step's position on the grid; it is reported if the new
    state is not finite.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    state = np.asarray(state, dtype=float)
    u = np.asarray(model.kappa(np.asarray(held_sample, dtype=float)))
    nxt = state + (model.f(state) + _matvec(model.g(state), u)) * h
    if epsilon != 0:
        dW = np.asarray(dW, dtype=float)
        noise = dW if model.sigma_is_identity else _matvec(model.sigma(state), dW)
        nxt = nxt + epsilon * noise
    if not np.all(np.isfinite(nxt)):
        raise DivergenceError(f"sampled SDE step {index} produced a non-finite state",
                              index + 1)
    return nxt


def sampled_batch(model: SystemModel, grid: TimeGrid, x0, epsilon: float,
                  dW: np.ndarray | None, n_paths: int = 1) -> np.ndarray:
    """Euler-Maruyama for the sampled SDE on every path at once.

    Returns ``(n_nodes, n_paths, n)``. Non-finite paths are left as they are;
    callers decide whether to raise or drop them.
    """
    n = model.state_dim
    if dW is not None:
        n_paths = dW.shape[0]
    X = np.empty((grid.n_nodes, n_paths, n))
    X[0] = np.asarray(x0, dtype=float)
    h = grid.steps
    sample_index = grid.sample_index
    noisy = epsilon != 0 and dW is not None
    held = -1
    u = None
    with np.errstate(all="ignore"):
        for i in range(grid.n_steps):
            j = sample_index[i]
            if j != held:
                u = model.kappa(X[j])
                held = j
            xi = X[i]
            nxt = xi + (model.f(xi) + _matvec(model.g(xi), u)) * h[i]
            if noisy:
                dw = dW[:, i]
                noise = dw if model.sigma_is_identity else _matvec(model.sigma(xi), dw)
                nxt = nxt + epsilon * noise
            X[i + 1] = nxt
    return X


def simulate_sampled_sde(model: SystemModel, config: SimulationConfig,
                         path: BrownianPath) -> np.ndarray:
    """States of the sampled SDE at every node of ``path.grid``, shape ``(n_nodes, n)``."""
    grid = path.grid
    if grid != config.grid():
        raise ValueError("path grid does not match the configuration's grid")
    X = sampled_batch(model, grid, config.x0, config.epsilon, path.increments[None])[:, 0]
    _raise_if_diverged(X, "sampled SDE")
    return X


def simulate_sampled_ode(model: SystemModel, config: SimulationConfig,
                         grid: TimeGrid | None = None) -> np.ndarray:
    grid = config.grid() if grid is None else grid
    x = sampled_batch(model, grid, config.x0, 0.0, None)[:, 0]
    _raise_if_diverged(x, "sampled ODE")
    return x


def simulate_limit_ode(model: SystemModel, config: SimulationConfig,
                       grid: TimeGrid | None = None, scheme: str | None = None) -> np.ndarray:
    """Integrate ``x' = f(x) + g(x) kappa(x)`` on the grid nodes."""
    grid = config.grid() if grid is None else grid
    scheme = config.limit_scheme if scheme is None else scheme
    F = model.drift_limit
    x = np.empty((grid.n_nodes, model.state_dim))
    x[0] = config.x0
    h = grid.steps
    with np.errstate(all="ignore"):
        if scheme == "euler":
            for i in range(grid.n_steps):
                x[i + 1] = x[i] + F(x[i]) * h[i]
        elif scheme == "rk4":
            for i in range(grid.n_steps):
                hi = h[i]
                k1 = F(x[i])
                k2 = F(x[i] + 0.5 * hi * k1)
                k3 = F(x[i] + 0.5 * hi * k2)
                k4 = F(x[i] + hi * k3)
                x[i + 1] = x[i] + (hi / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
    _raise_if_diverged(x, "limit ODE")
    return x


def effective_drift(model: SystemModel, x, c: float) -> np.ndarray:
    """``-(c/2) gDk(x) (f(x) + g(x) kappa(x))``; broadcasts over leading axes."""
    if not (c >= 0 and math.isfinite(c)):
        raise ValueError(f"c must be finite and nonnegative, got {c}")
    x = np.asarray(x, dtype=float)
    if c == 0:
        return np.zeros(x.shape)
    return -0.5 * c * _matvec(eval_gdk(model, x), model.drift_limit(x))


def fluctuation_drift_matrix(model: SystemModel, x) -> np.ndarray:
    """``Df(x) + gDk(x) + sum_i Dg_i(x) kappa_i(x)``."""
    x = np.asarray(x, dtype=float)
    dg = np.asarray(model.jac_g(x))  # (..., m, n, n)
    kap = np.asarray(model.kappa(x))  # (..., m)
    return (np.asarray(model.jac_f(x)) + eval_gdk(model, x)
            + np.einsum("...kij,...k->...ij", dg, kap))


@dataclass(frozen=True)
class FluctuationCoefficients:
    """Coefficients of ``dZ = (A Z + b) dt + S dW`` at every grid node."""

    A: np.ndarray  # (n_nodes, n, n)
    b: np.ndarray  # (n_nodes, n)
    S: np.ndarray  # (n_nodes, n, n)


def fluctuation_coefficients(model: SystemModel, x_series, c: float) -> FluctuationCoefficients:
    x_series = np.asarray(x_series, dtype=float)
    S = np.array(np.broadcast_to(model.sigma(x_series),
                                 x_series.shape + (model.state_dim,)), dtype=float)
    return FluctuationCoefficients(
        A=np.ascontiguousarray(fluctuation_drift_matrix(model, x_series), dtype=float),
        b=np.ascontiguousarray(effective_drift(model, x_series, c), dtype=float),
        S=S,
    )


def fluctuation_batch(coef: FluctuationCoefficients, h: np.ndarray,
                      dW: np.ndarray) -> np.ndarray:
    """Euler-Maruyama for the linear fluctuation SDE on every path, Z(0) = 0."""
    n_paths, n_steps, n = dW.shape
    Z = np.empty((n_steps + 1, n_paths, n))
    Z[0] = 0.0
    A, b, S = coef.A, coef.b, coef.S
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            zi = Z[i]
            Z[i + 1] = zi + (zi @ A[i].T + b[i]) * h[i] + dW[:, i] @ S[i].T
    return Z


def simulate_fluctuation_sde(model: SystemModel, config: SimulationConfig,
                             x_series, path: BrownianPath) -> np.ndarray:
    """Limiting fluctuation process driven by the increments of ``path``."""
    c = config.c
    if c is None or math.isinf(c):
        raise ValueError("the fluctuation SDE needs a finite regime constant c")
    x_series = np.asarray(x_series, dtype=float)
    if len(x_series) != path.grid.n_nodes:
        raise ValueError("x_series is not aligned with the path grid")
    coef = fluctuation_coefficients(model, x_series, c)
    Z = fluctuation_batch(coef, path.grid.steps, path.increments[None])[:, 0]
    _raise_if_diverged(Z, "fluctuation SDE")
    return Z


def simulate_coupled(model: SystemModel, config: SimulationConfig, path: BrownianPath,
                     rescaled: bool | None = None,
                     sampled_ode: bool = True) -> TrajectoryBundle:
    """Run every solver on one grid and one Brownian path.

    The limit ODE uses explicit Euler here so that ``X - x`` carries no
    scheme mismatch. ``rescaled=None`` builds ``(X - x)/eps`` whenever
    ``eps > 0``; asking for it at ``eps = 0`` is an error.
    """
    if rescaled is None:
        rescaled = config.epsilon > 0
    if rescaled and config.epsilon == 0:
        raise ValueError("(X - x)/epsilon is undefined at epsilon = 0")
    grid = path.grid
    X = simulate_sampled_sde(model, config, path)
    x = simulate_limit_ode(model, config, grid, scheme="euler")
    bundle = TrajectoryBundle(grid=grid, epsilon=config.epsilon, x_sde=X, x_limit=x,
                              meta={"c": config.c, "kappa_eps": config.kappa_eps,
                                    "regime": config.regime})
    if sampled_ode:
        bundle.x_sampled_ode = simulate_sampled_ode(model, config, grid)
    c = config.c
    if c is not None and math.isfinite(c):
        bundle.z_limit = simulate_fluctuation_sde(model, config, x, path)
    elif c is not None:
        bundle.u_rescaled = (X - x) / config.delta
    if rescaled:
        bundle.z_rescaled = (X - x) / config.epsilon
    return bundle


def coupled_metrics_batch(model: SystemModel, grid: TimeGrid, x0, epsilon: float,
                          dW: np.ndarray, x_limit: np.ndarray,
                          coef: FluctuationCoefficients | None):
    """Per-path error metrics of a batch of coupled runs (numpy route).

    Returns ``(lln_sup, clt_sup, terminal)`` where ``lln_sup`` is
    ``max_t |X - x|_1``, ``clt_sup`` is ``max_t |X - x - eps Z|_1 / eps``
    (nan without ``coef``) and ``terminal`` is the signed ``X - x - eps Z`` at
    the horizon (``X - x`` without ``coef``).
    """
    X = sampled_batch(model, grid, x0, epsilon, dW)
    with np.errstate(all="ignore"):
        d = X - x_limit[:, None, :]
        lln = np.abs(d).sum(axis=2).max(axis=0)
        if coef is None:
            return lln, np.full(len(lln), np.nan), d[-1]
        Z = fluctuation_batch(coef, grid.steps, dW)
        r = d - epsilon * Z
        clt = np.abs(r).sum(axis=2).max(axis=0) / epsilon
        return lln, clt, r[-1]
