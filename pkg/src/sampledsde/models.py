"""System models for sampled-data SDEs.

A model bundles the vector fields ``f``, ``g``, ``kappa``, ``sigma`` of

    dX = [f(X) + g(X) kappa(X_held)] dt + eps * sigma(X) dW

together with the Jacobians needed by the limiting fluctuation equation.

All maps must broadcast over leading axes: a state array of shape ``(..., n)``
yields ``f -> (..., n)``, ``g -> (..., n, m)``, ``kappa -> (..., m)``,
``sigma -> (..., n, n)``, ``df -> (..., n, n)``, ``dkappa -> (..., m, n)`` and
``dg -> (..., m, n, n)`` (one Jacobian per column of ``g``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Map = Callable[[np.ndarray], np.ndarray]


class ModelDefinitionError(ValueError):
    """A model map returned an array of the wrong shape."""


class ModelEvaluationError(ArithmeticError):
    """A model map returned non-finite values."""


class JacobianSource(str, enum.Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite-difference"


_FD_STEP_SCALE = np.finfo(float).eps ** (1.0 / 3.0)


def _central_difference(fun: Map, x: np.ndarray) -> np.ndarray:
    """Jacobian of ``fun`` at a single point, last axis = input component."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[-1]):
        h = max(1.0, abs(x[j])) * _FD_STEP_SCALE
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        # use the actually representable step
        cols.append((np.asarray(fun(xp)) - np.asarray(fun(xm))) / (xp[j] - xm[j]))
    return np.stack(cols, axis=-1)


def _identity_sigma(n: int) -> Map:
    eye = np.eye(n)

    def sigma(x):
        x = np.asarray(x)
        return np.broadcast_to(eye, x.shape[:-1] + (n, n))

    return sigma


@dataclass(frozen=True)
class SystemModel:
    """Pure bundle of the vector fields and Jacobians of a sampled-data system.

    Missing Jacobians fall back to central finite differences (single points
    only); a missing ``sigma`` is the identity.
    """

    name: str
    state_dim: int
    control_dim: int
    f: Map
    g: Map
    kappa: Map
    sigma: Map | None = None
    df: Map | None = None
    dkappa: Map | None = None
    dg: Map | None = None
    params: dict = field(default_factory=dict)
    #: key of a compiled kernel able to run this model, see ``sampledsde.kernels``
    kernel: str | None = None
    sigma_is_identity: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ModelDefinitionError("state_dim and control_dim must be positive")
        if self.sigma is None:
            object.__setattr__(self, "sigma", _identity_sigma(self.state_dim))
            object.__setattr__(self, "sigma_is_identity", True)

    @property
    def jacobian_source(self) -> dict[str, JacobianSource]:
        return {
            name: JacobianSource.ANALYTIC if getattr(self, name) is not None
            else JacobianSource.FINITE_DIFFERENCE
            for name in ("df", "dkappa", "dg")
        }

    # Jacobians with finite-difference fallback. The fallback is pointwise.

    def jac_f(self, x):
        if self.df is not None:
            return self.df(x)
        return _pointwise(lambda p: _central_difference(self.f, p), x)

    def jac_kappa(self, x):
        if self.dkappa is not None:
            return self.dkappa(x)
        return _pointwise(lambda p: _central_difference(self.kappa, p), x)

    def jac_g(self, x):
        if self.dg is not None:
            return self.dg(x)
        # d g[:, i] / dx for each column i -> (m, n, n)
        return _pointwise(
            lambda p: np.moveaxis(_central_difference(self.g, p), 1, 0), x)

    def drift_limit(self, x):
        """Vector field of the limiting ODE, ``f(x) + g(x) kappa(x)``."""
        x = np.asarray(x, dtype=float)
        return self.f(x) + np.einsum("...ij,...j->...i", self.g(x), self.kappa(x))


def _pointwise(fun, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return fun(x)
    flat = x.reshape(-1, x.shape[-1])
    out = np.stack([fun(p) for p in flat])
    return out.reshape(x.shape[:-1] + out.shape[1:])


def _check_shape(name: str, value, expected: tuple[int, ...]):
    value = np.asarray(value)
    if value.shape != expected:
        raise ModelDefinitionError(
            f"{name} returned shape {value.shape}, expected {expected}")
    return value


def validate_point(model: SystemModel, x) -> None:
    """Evaluate every map at ``x`` and check declared shapes and finiteness."""
    n, m = model.state_dim, model.control_dim
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise ModelDefinitionError(f"state has shape {x.shape}, expected ({n},)")
    expected = {
        "f": (model.f, (n,)),
        "g": (model.g, (n, m)),
        "kappa": (model.kappa, (m,)),
        "sigma": (model.sigma, (n, n)),
        "df": (model.jac_f, (n, n)),
        "dkappa": (model.jac_kappa, (m, n)),
        "dg": (model.jac_g, (m, n, n)),
    }
    for name, (fun, shape) in expected.items():
        value = _check_shape(name, fun(x), shape)
        if not np.all(np.isfinite(value)):
            raise ModelEvaluationError(f"{name} is not finite at x={x.tolist()}")


def eval_gdk(model: SystemModel, x) -> np.ndarray:
    """Return ``g(x) @ Dkappa(x)``, an ``(n, n)`` matrix (broadcasts over leading axes)."""
    x = np.asarray(x, dtype=float)
    n, m = model.state_dim, model.control_dim
    if x.shape[-1:] != (n,):
        raise ModelDefinitionError(f"state has shape {x.shape}, expected (..., {n})")
    g = np.asarray(model.g(x))
    dk = np.asarray(model.jac_kappa(x))
    if g.shape[-2:] != (n, m):
        raise ModelDefinitionError(f"g returned shape {g.shape}, expected (..., {n}, {m})")
    if dk.shape[-2:] != (m, n):
        raise ModelDefinitionError(f"dkappa returned shape {dk.shape}, expected (..., {m}, {n})")
    return g @ dk


@dataclass
class JacobianReport:
    rel_tol: float
    #: worst relative deviation per map over all points
    max_deviation: dict[str, float]
    #: point at which each worst deviation occurred
    worst_point: dict[str, list[float]]

    @property
    def passed(self) -> bool:
        return all(v <= self.rel_tol for v in self.max_deviation.values())


def _relative_deviation(analytic, numeric) -> float:
    scale = np.max(np.abs(numeric))
    diff = np.max(np.abs(analytic - numeric))
    return float(diff / scale) if scale > 0 else float(diff)


def check_jacobians(model: SystemModel, points, rel_tol: float = 1e-5) -> JacobianReport:
    """Compare the model's Jacobians with central finite differences.

    The step for component ``j`` is ``max(1, |x_j|) * eps**(1/3)``. Deviation
    is ``max|analytic - fd| / max|fd|`` (absolute when ``fd`` vanishes).
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    points = [np.asarray(p, dtype=float) for p in points]
    if not points:
        raise ValueError("points must be nonempty")

    def guarded(name, fun):
        def wrapped(p):
            value = np.asarray(fun(p), dtype=float)
            if not np.all(np.isfinite(value)):
                raise ModelEvaluationError(f"{name} is not finite at x={p.tolist()}")
            return value
        return wrapped

    f = guarded("f", model.f)
    kappa = guarded("kappa", model.kappa)
    g = guarded("g", model.g)
    analytic = {
        "df": guarded("df", model.jac_f),
        "dkappa": guarded("dkappa", model.jac_kappa),
        "dg": guarded("dg", model.jac_g),
    }
    worst = {k: 0.0 for k in analytic}
    where = {k: points[0].tolist() for k in analytic}
    for p in points:
        # evaluate at the test point itself first so errors name that point
        f(p), kappa(p), g(p)
        numeric = {
            "df": _central_difference(f, p),
            "dkappa": _central_difference(kappa, p),
            "dg": np.moveaxis(_central_difference(g, p), 1, 0),
        }
        for name, fun in analytic.items():
            dev = _relative_deviation(fun(p), numeric[name])
            if dev > worst[name]:
                worst[name] = dev
                where[name] = p.tolist()
    return JacobianReport(rel_tol=rel_tol, max_deviation=worst, worst_point=where)


# -- builtin models -----------------------------------------------------------

# Stabilizing law for the inverted pendulum; linear growth in the velocity.
PENDULUM_GAIN_SIN = 2.0
PENDULUM_GAIN_COS2 = 1.35
PENDULUM_GAIN_COS = 0.22


def builtin_pendulum() -> SystemModel:
    """Inverted pendulum ``x1' = x2, x2' = sin x1 - cos(x1) u`` with u = kappa(x)."""
    a, b, c = PENDULUM_GAIN_SIN, PENDULUM_GAIN_COS2, PENDULUM_GAIN_COS

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.stack([x[..., 1], np.sin(x[..., 0])], axis=-1)

    def g(x):
        x = np.asarray(x, dtype=float)
        col = np.stack([np.zeros_like(x[..., 0]), -np.cos(x[..., 0])], axis=-1)
        return col[..., None]

    def kappa(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        cx = np.cos(x1)
        return (a * np.sin(x1) + b * x2 * cx * cx - c * x2 * cx)[..., None]

    def df(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 1] = 1.0
        out[..., 1, 0] = np.cos(x[..., 0])
        return out

    def dkappa(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        s, cx = np.sin(x1), np.cos(x1)
        out = np.empty(x.shape[:-1] + (1, 2))
        out[..., 0, 0] = a * cx - 2.0 * b * x2 * cx * s + c * x2 * s
        out[..., 0, 1] = b * cx * cx - c * cx
        return out

    def dg(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (1, 2, 2))
        out[..., 0, 1, 0] = np.sin(x[..., 0])
        return out

    return SystemModel(
        name="pendulum", state_dim=2, control_dim=1,
        f=f, g=g, kappa=kappa, sigma=None, df=df, dkappa=dkappa, dg=dg,
        params={}, kernel="pendulum",
    )


def builtin_scalar_linear(a: float, k: float, sigma: float = 1.0) -> SystemModel:
    """Scalar linear feedback ``f(x) = a x``, ``g = 1``, ``kappa(y) = -k y``, constant noise."""
    a, k, s = float(a), float(k), float(sigma)

    def f(x):
        return a * np.asarray(x, dtype=float)

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.ones(x.shape[:-1] + (1, 1))

    def kappa(x):
        return -k * np.asarray(x, dtype=float)

    def sig(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1] + (1, 1), s)

    def df(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1] + (1, 1), a)

    def dkappa(x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1] + (1, 1), -k)

    def dg(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1, 1, 1))

    return SystemModel(
        name="scalar_linear", state_dim=1, control_dim=1,
        f=f, g=g, kappa=kappa, sigma=sig, df=df, dkappa=dkappa, dg=dg,
        params={"a": a, "k": k, "sigma": s}, kernel="scalar_linear",
    )


MODEL_REGISTRY: dict[str, Callable[..., SystemModel]] = {
    "pendulum": builtin_pendulum,
    "scalar_linear": builtin_scalar_linear,
}
MODEL_STATE_DIM = {"pendulum": 2, "scalar_linear": 1}


def make_model(name: str, **params) -> SystemModel:
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return factory(**params)
