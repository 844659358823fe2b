import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sampledsde.experiment import (
    ErrorSummary,
    ExperimentError,
    fit_rate,
    fluctuation_terminal_samples,
    linear_oracle_moments,
    run_cell,
    simulate_paths,
    sup_error_1norm,
    sweep_epsilon,
)
from sampledsde.integrators import SimulationConfig, simulate_coupled
from sampledsde.models import builtin_pendulum, builtin_scalar_linear
from sampledsde.noise import generate_path


def linear_cfg(**kw):
    base = dict(epsilon=2**-4, delta=2**-4, horizon=1.0, dt=2**-8, x0=(1.0,), regime_c=1.0)
    base.update(kw)
    return SimulationConfig(**base)


def test_sup_error_examples():
    assert sup_error_1norm([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert sup_error_1norm([0.0, 1.0, 3.0], [0.0, 0.0, 0.0]) == 3.0
    assert sup_error_1norm([[1.0, -2.0]], [[0.0, 0.0]]) == 3.0
    with pytest.raises(ValueError):
        sup_error_1norm([1.0, 2.0], [1.0])


def test_per_path_metrics_match_single_path_solvers():
    model = builtin_pendulum()
    config = SimulationConfig(epsilon=2**-3, delta=2**-4, horizon=5.0, dt=2**-5,
                              x0=(1.0, 0.0))
    lln, clt, term, have_z = simulate_paths(model, config, 3, seed=4, backend="python")
    assert have_z
    for pid in range(3):
        path = generate_path(config.grid(), 2, 4, pid)
        bundle = simulate_coupled(model, config, path)
        d = bundle.x_sde - bundle.x_limit
        assert lln[pid] == pytest.approx(sup_error_1norm(bundle.x_sde, bundle.x_limit),
                                         rel=1e-12)
        r = d - config.epsilon * bundle.z_limit
        assert clt[pid] == pytest.approx(np.abs(r).sum(axis=1).max() / config.epsilon,
                                         rel=1e-10)
        np.testing.assert_allclose(term[pid], r[-1], rtol=1e-10, atol=1e-14)


def test_exact_cancellation_sentinel():
    model = builtin_scalar_linear(0.0, 0.0)
    for eps, delta in [(0.5, 0.25), (2**-6, 2**-3), (0.01, 0.01)]:
        summary = run_cell(model, linear_cfg(epsilon=eps, delta=delta), 64, seed=1)
        assert summary.clt_sup < 1e-12


def test_clt_at_zero_epsilon_is_rejected():
    model = builtin_scalar_linear(2.0, 1.0)
    with pytest.raises(ValueError, match="CLT"):
        run_cell(model, linear_cfg(epsilon=0.0), 4, seed=0)
    summary = run_cell(model, linear_cfg(epsilon=0.0, regime_c=None), 4, seed=0, clt=False)
    assert math.isnan(summary.clt_sup)
    assert summary.lln_sup_p1 > 0


def test_single_epsilon_sweep_equals_run_cell():
    model = builtin_scalar_linear(2.0, 1.0)
    config = linear_cfg()
    [swept] = sweep_epsilon(model, config, [config.epsilon], 50, seed=3)
    assert swept == run_cell(model, config, 50, seed=3)


def test_sweep_with_delta_ratio():
    model = builtin_scalar_linear(2.0, 1.0)
    out = sweep_epsilon(model, linear_cfg(), [2**-3, 2**-4], 20, seed=3, delta_ratio=1.0)
    assert [(s.epsilon, s.delta) for s in out] == [(2**-3, 2**-3), (2**-4, 2**-4)]
    with pytest.raises(ValueError):
        sweep_epsilon(model, linear_cfg(), [], 20, seed=3)


@pytest.mark.parametrize("threads, chunk", [(1, 7), (3, 16), (4, 256)])
def test_summary_independent_of_threads_and_chunks(threads, chunk):
    model = builtin_pendulum()
    config = SimulationConfig(epsilon=2**-3, delta=2**-4, horizon=5.0, dt=2**-5,
                              x0=(1.0, 0.0))
    ref = run_cell(model, config, 40, seed=12)
    assert run_cell(model, config, 40, seed=12, threads=threads, chunk_size=chunk) == ref


def test_all_paths_diverging_is_an_experiment_error():
    # the limit is constant (a = k) but the held control explodes once noise
    # moves the state away from its last sample
    model = builtin_scalar_linear(1e300, 1e300)
    config = SimulationConfig(epsilon=0.25, delta=0.5, horizon=1.0, dt=0.125, x0=(1.0,))
    with np.errstate(all="ignore"), pytest.raises(ExperimentError, match="diverged"):
        run_cell(model, config, 8, seed=0, backend="python")


def test_jensen_consistency():
    model = builtin_pendulum()
    config = SimulationConfig(epsilon=2**-2, delta=2**-4, horizon=5.0, dt=2**-5,
                              x0=(1.0, 0.0))
    s = run_cell(model, config, 200, seed=2)
    slack = 3 * (s.lln_sup_p2_se + 2 * s.lln_sup_p1 * s.lln_sup_p1_se)
    assert s.lln_sup_p2 >= s.lln_sup_p1 ** 2 - slack


def test_summary_columns_follow_csv_schema():
    s = run_cell(builtin_pendulum(), SimulationConfig(
        epsilon=0.5, delta=0.25, horizon=1.0, dt=0.125, x0=(1.0, 0.0)), 5, seed=0)
    assert s.columns()[:16] == [
        "epsilon", "delta", "c", "kappa_eps", "n_paths", "n_diverged", "lln_sup_p1",
        "lln_sup_p1_se", "lln_sup_p2", "lln_sup_p2_se", "clt_sup", "clt_sup_se",
        "term_err_1", "term_err_1_se", "term_err_2", "term_err_2_se"]
    assert len(s.row()) == len(s.columns())
    assert s.n_retained == 5 and isinstance(s, ErrorSummary)


def test_fit_rate_examples():
    eps = [1.0, 0.5, 0.25]
    fit = fit_rate([(e, e) for e in eps])
    assert fit.slope == pytest.approx(1.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit_rate([(e, e * e) for e in eps]).slope == pytest.approx(2.0, abs=1e-12)
    assert fit_rate([(e, 3.0) for e in eps]).slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_rate([(1.0, 0.0), (0.5, 1.0)])
    with pytest.raises(ValueError):
        fit_rate([(1.0, 1.0)])


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-5, 5), st.floats(0.01, 10))
def test_fit_rate_recovers_power_laws(p, log_c, scale):
    pts = [(2.0 ** -i, scale * 2.0 ** (log_c - p * i)) for i in range(1, 8)]
    assert fit_rate(pts).slope == pytest.approx(p, abs=1e-9)


def test_linear_oracle_closed_forms():
    x_T, mean, var = linear_oracle_moments(2.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert x_T == pytest.approx(math.e)
    assert mean == pytest.approx(0.5 * math.e)
    assert mean == pytest.approx(1.35914, abs=1e-5)
    assert var == pytest.approx((math.e ** 2 - 1) / 2)
    assert var == pytest.approx(3.19453, abs=1e-5)
    assert linear_oracle_moments(2.0, 1.0, 0.0, 1.0, 1.0, 1.0)[1] == 0.0
    assert linear_oracle_moments(3.0, 3.0, 1.0, 2.0, 1.5, 1.0) == (1.0, 0.0, 6.0)


def test_oracle_forms_match_ode_integration():
    from scipy.integrate import solve_ivp

    a, k, c, s, T, x0 = 1.7, 0.6, 0.8, 1.3, 1.2, 0.9
    lam = a - k

    def rhs(t, y):
        x, m, v = y
        return [lam * x, lam * m + 0.5 * c * k * lam * x, 2 * lam * v + s * s]

    sol = solve_ivp(rhs, (0, T), [x0, 0.0, 0.0], rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(linear_oracle_moments(a, k, c, s, T, x0), sol.y[:, -1],
                               rtol=1e-9)


def test_fluctuation_variance_without_drift_correction():
    model = builtin_scalar_linear(2.0, 1.0)
    config = linear_cfg(epsilon=2**-6, delta=2**-6, dt=1e-3, regime_c=0.0)
    z = fluctuation_terminal_samples(model, config, 100_000, seed=77)[:, 0]
    var = z.var(ddof=1)
    se = var * math.sqrt(2 / (len(z) - 1))
    assert abs(var - (math.e ** 2 - 1) / 2) < 3 * se
    assert abs(z.mean()) < 3 * z.std(ddof=1) / math.sqrt(len(z))


def test_terminal_samples_need_finite_c():
    with pytest.raises(ValueError):
        fluctuation_terminal_samples(builtin_scalar_linear(2.0, 1.0),
                                     linear_cfg(regime_c=math.inf), 4, seed=0)


def test_run_cell_is_repeatable():
    model = builtin_scalar_linear(2.0, 1.0)
    config = dataclasses.replace(linear_cfg(), epsilon=2**-3)
    assert run_cell(model, config, 30, seed=5) == run_cell(model, config, 30, seed=5)


def test_diverged_paths_are_excluded(monkeypatch):
    from sampledsde import kernels

    real = kernels.coupled_paths

    def flaky(*args, **kwargs):
        lln, clt, term = real(*args, **kwargs)
        lln = lln.copy()
        lln[::4] = np.nan
        return lln, clt, term

    model = builtin_scalar_linear(2.0, 1.0)
    config = linear_cfg()
    clean = simulate_paths(model, config, 40, seed=6)
    monkeypatch.setattr(kernels, "coupled_paths", flaky)
    s = run_cell(model, config, 40, seed=6, chunk_size=40)
    assert (s.n_paths, s.n_diverged, s.n_retained) == (40, 10, 30)
    keep = np.ones(40, bool)
    keep[::4] = False
    assert s.lln_sup_p1 == pytest.approx(clean[0][keep].mean(), rel=1e-12)
