"""Monte Carlo harness for coupled runs: error summaries, sweeps, rate fits
and closed-form moments of the scalar linear case."""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .integrators import (
    SimulationConfig,
    fluctuation_batch,
    fluctuation_coefficients,
    simulate_limit_ode,
)
from .models import SystemModel
from .noise import generate_batch

DEFAULT_CHUNK = 256


class ExperimentError(RuntimeError):
    pass


def _mean_se(values) -> tuple[float, float]:
    """Compensated mean and standard error, summing in the given order."""
    values = [float(v) for v in values]
    n = len(values)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(values) / n
    if n < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var / n)


@dataclass(frozen=True)
class ErrorSummary:
    epsilon: float
    delta: float
    regime_c: float
    kappa_eps: float
    n_paths: int
    n_diverged: int
    lln_sup_p1: float
    lln_sup_p1_se: float
    lln_sup_p2: float
    lln_sup_p2_se: float
    clt_sup: float
    clt_sup_se: float
    #: per component mean of |X_j(T) - x_j(T) - eps Z_j(T)|
    term_err: tuple[float, ...]
    term_err_se: tuple[float, ...]
    #: per component signed mean of X_j(T) - x_j(T) - eps Z_j(T)
    term_err_signed: tuple[float, ...]
    term_err_signed_se: tuple[float, ...]

    @property
    def n_retained(self) -> int:
        return self.n_paths - self.n_diverged

    def columns(self) -> list[str]:
        cols = ["epsilon", "delta", "c", "kappa_eps", "n_paths", "n_diverged",
                "lln_sup_p1", "lln_sup_p1_se", "lln_sup_p2", "lln_sup_p2_se",
                "clt_sup", "clt_sup_se"]
        for j in range(1, len(self.term_err) + 1):
            cols += [f"term_err_{j}", f"term_err_{j}_se"]
        for j in range(1, len(self.term_err) + 1):
            cols += [f"term_signed_{j}", f"term_signed_{j}_se"]
        return cols

    def row(self) -> list:
        row = [self.epsilon, self.delta, self.regime_c, self.kappa_eps, self.n_paths,
               self.n_diverged, self.lln_sup_p1, self.lln_sup_p1_se, self.lln_sup_p2,
               self.lln_sup_p2_se, self.clt_sup, self.clt_sup_se]
        for m, s in zip(self.term_err, self.term_err_se):
            row += [m, s]
        for m, s in zip(self.term_err_signed, self.term_err_signed_se):
            row += [m, s]
        return row


@dataclass(frozen=True)
class RateFit:
    points: tuple[tuple[float, float], ...]  # (log2 eps, log2 error)
    slope: float
    intercept: float
    r_squared: float


def sup_error_1norm(a, b) -> float:
    """``max_t |a_t - b_t|_1`` over the nodes of two aligned series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"series shapes differ: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if diff.ndim == 1:
        return float(diff.max()) if diff.size else 0.0
    return float(diff.reshape(len(diff), -1).sum(axis=1).max())


def simulate_paths(model: SystemModel, config: SimulationConfig, n_paths: int, seed: int,
                   clt: bool = True, threads: int = 1, chunk_size: int = DEFAULT_CHUNK,
                   backend: str = "auto"):
    """Raw per-path metrics ``(lln_sup, clt_sup, terminal)`` for path ids ``0..n_paths-1``.

    Chunking and thread count never change the numbers: every path's noise
    is keyed by its id and each path is simulated independently.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if clt and config.epsilon == 0:
        raise ValueError("the CLT metric is undefined at epsilon = 0")
    grid = config.grid()
    x_limit = simulate_limit_ode(model, config, grid, scheme="euler")
    c = config.c
    coef = None
    if clt and c is not None and math.isfinite(c):
        coef = fluctuation_coefficients(model, x_limit, c)

    def work(start):
        ids = range(start, min(start + chunk_size, n_paths))
        dW = generate_batch(grid, model.state_dim, seed, ids)
        return kernels.coupled_paths(model, grid, config.x0, config.epsilon, dW,
                                     x_limit, coef, backend=backend)

    starts = range(0, n_paths, chunk_size)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    lln = np.concatenate([p[0] for p in parts])
    clt_sup = np.concatenate([p[1] for p in parts])
    term = np.concatenate([p[2] for p in parts])
    return lln, clt_sup, term, coef is not None


def run_cell(model: SystemModel, config: SimulationConfig, n_paths: int, seed: int,
             clt: bool = True, threads: int = 1, chunk_size: int = DEFAULT_CHUNK,
             backend: str = "auto") -> ErrorSummary:
    lln, clt_sup, term, have_z = simulate_paths(
        model, config, n_paths, seed, clt=clt, threads=threads,
        chunk_size=chunk_size, backend=backend)
    ok = np.isfinite(lln) & np.isfinite(term).all(axis=1)
    if have_z:
        ok &= np.isfinite(clt_sup)
    n_ok = int(ok.sum())
    if n_ok == 0:
        raise ExperimentError(f"all {n_paths} paths diverged (epsilon={config.epsilon})")
    lln, clt_sup, term = lln[ok], clt_sup[ok], term[ok]

    p1, p1_se = _mean_se(lln)
    p2, p2_se = _mean_se(lln * lln)
    if have_z:
        cm, cm_se = _mean_se(clt_sup)
    else:
        cm, cm_se = math.nan, math.nan
    abs_stats = [_mean_se(np.abs(term[:, j])) for j in range(term.shape[1])]
    signed_stats = [_mean_se(term[:, j]) for j in range(term.shape[1])]
    c = config.c
    return ErrorSummary(
        epsilon=config.epsilon, delta=config.delta,
        regime_c=math.nan if c is None else c, kappa_eps=config.kappa_eps,
        n_paths=n_paths, n_diverged=n_paths - n_ok,
        lln_sup_p1=p1, lln_sup_p1_se=p1_se, lln_sup_p2=p2, lln_sup_p2_se=p2_se,
        clt_sup=cm, clt_sup_se=cm_se,
        term_err=tuple(m for m, _ in abs_stats), term_err_se=tuple(s for _, s in abs_stats),
        term_err_signed=tuple(m for m, _ in signed_stats),
        term_err_signed_se=tuple(s for _, s in signed_stats),
    )


def fluctuation_terminal_samples(model: SystemModel, config: SimulationConfig, n_paths: int,
                                 seed: int, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """``Z_T`` of the limiting fluctuation SDE for path ids ``0..n_paths-1``, shape ``(n_paths, n)``.

    The limit ODE is integrated with the same scheme as in coupled runs.
    """
    c = config.c
    if c is None or math.isinf(c):
        raise ValueError("the fluctuation SDE needs a finite regime constant c")
    grid = config.grid()
    x_limit = simulate_limit_ode(model, config, grid, scheme="euler")
    coef = fluctuation_coefficients(model, x_limit, c)
    out = []
    for start in range(0, n_paths, chunk_size):
        dW = generate_batch(grid, model.state_dim, seed,
                            range(start, min(start + chunk_size, n_paths)))
        out.append(fluctuation_batch(coef, grid.steps, dW)[-1])
    return np.concatenate(out)


def sweep_epsilon(model: SystemModel, base_config: SimulationConfig, epsilons,
                  n_paths: int, seed: int, delta_ratio: float | None = None,
                  **run_kwargs) -> list[ErrorSummary]:
    """One :func:`run_cell` per epsilon, everything else fixed.

    With ``delta_ratio`` the sampling period follows ``delta = ratio * eps``.
    The seed is shared across cells, so cells reuse the same underlying normals.
    """
    epsilons = [float(e) for e in epsilons]
    if not epsilons or any(e <= 0 for e in epsilons):
        raise ValueError("epsilons must be a nonempty list of positive values")
    out = []
    for eps in epsilons:
        changes = {"epsilon": eps}
        if delta_ratio is not None:
            changes["delta"] = delta_ratio * eps
        cfg = dataclasses.replace(base_config, **changes)
        out.append(run_cell(model, cfg, n_paths, seed, **run_kwargs))
    return out


def fit_rate(points) -> RateFit:
    """Least-squares line through ``(log2 eps, log2 error)``."""
    pts = [(float(e), float(v)) for e, v in points]
    if len(pts) < 2:
        raise ValueError("need at least two points")
    if any(not (e > 0 and v > 0) for e, v in pts):
        raise ValueError("epsilon and error values must be positive")
    x = np.log2([e for e, _ in pts])
    y = np.log2([v for _, v in pts])
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(points=tuple(zip(x.tolist(), y.tolist())), slope=float(slope),
                   intercept=float(intercept), r_squared=r2)


def linear_oracle_moments(a: float, k: float, c: float, sigma_const: float, T: float,
                          x0: float) -> tuple[float, float, float]:
    """Exact ``x(T)``, ``E Z_T`` and ``Var Z_T`` for the scalar linear model.

    With ``lam = a - k`` the limit is ``x0 e^{lam t}``; the mean of Z solves
    ``m' = lam m + (c/2) k lam x(t)`` and the variance ``v' = 2 lam v + sigma^2``.
    """
    lam = a - k
    growth = math.exp(lam * T)
    x_T = x0 * growth
    mean_Z = 0.5 * c * k * lam * x0 * T * growth
    if lam == 0:
        var_Z = sigma_const ** 2 * T
    else:
        var_Z = sigma_const ** 2 * math.expm1(2 * lam * T) / (2 * lam)
    return x_T, mean_Z, var_Z
