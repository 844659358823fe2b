import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sampledsde.models import (
    JacobianSource,
    ModelDefinitionError,
    ModelEvaluationError,
    SystemModel,
    builtin_pendulum,
    builtin_scalar_linear,
    check_jacobians,
    eval_gdk,
    make_model,
    validate_point,
)

from conftest import zero_drift_model

finite = st.floats(-2.0, 2.0, allow_nan=False)


def naive_gdk(model, x):
    g = np.asarray(model.g(x))
    dk = np.asarray(model.jac_kappa(x))
    n, m = g.shape
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            for k in range(m):
                out[i, j] += g[i, k] * dk[k, j]
    return out


def test_linear_gdk_is_minus_k():
    model = builtin_scalar_linear(2.0, 1.0)
    np.testing.assert_array_equal(eval_gdk(model, [0.7]), [[-1.0]])


def test_pendulum_gdk_at_origin():
    np.testing.assert_allclose(eval_gdk(builtin_pendulum(), [0.0, 0.0]),
                               [[0.0, 0.0], [-2.0, -1.13]], atol=1e-15)


def test_zero_g_annihilates_product():
    model = zero_drift_model(3)
    np.testing.assert_array_equal(eval_gdk(model, [1.0, 2.0, 3.0]), np.zeros((3, 3)))


@settings(max_examples=60, deadline=None)
@given(arrays(float, 2, elements=finite))
def test_pendulum_gdk_matches_triple_loop(x):
    model = builtin_pendulum()
    np.testing.assert_allclose(eval_gdk(model, x), naive_gdk(model, x), rtol=0, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(arrays(float, 1, elements=finite), st.floats(-3, 3), st.floats(-3, 3))
def test_linear_gdk_matches_triple_loop(x, a, k):
    model = builtin_scalar_linear(a, k)
    np.testing.assert_array_equal(eval_gdk(model, x), naive_gdk(model, x))


def test_pendulum_values():
    model = builtin_pendulum()
    np.testing.assert_array_equal(model.f(np.array([1.0, 0.0])), [0.0, np.sin(1.0)])
    np.testing.assert_array_equal(model.kappa(np.zeros(2)), [0.0])
    np.testing.assert_array_equal(model.g(np.zeros(2)), [[0.0], [-1.0]])


def test_linear_values():
    model = builtin_scalar_linear(2.0, 1.0)
    assert model.f(np.array([3.0]))[0] == 6.0
    assert model.kappa(np.array([3.0]))[0] == -3.0
    assert model.drift_limit(np.array([1.0]))[0] == 1.0
    A = model.jac_f([5.0]) + eval_gdk(model, [5.0])
    assert A[0, 0] == 1.0


def test_maps_broadcast_over_leading_axes():
    model = builtin_pendulum()
    xs = np.random.default_rng(1).uniform(-2, 2, size=(4, 3, 2))
    assert model.f(xs).shape == (4, 3, 2)
    assert model.g(xs).shape == (4, 3, 2, 1)
    assert model.kappa(xs).shape == (4, 3, 1)
    assert model.sigma(xs).shape == (4, 3, 2, 2)
    assert model.jac_f(xs).shape == (4, 3, 2, 2)
    assert model.jac_kappa(xs).shape == (4, 3, 1, 2)
    assert model.jac_g(xs).shape == (4, 3, 1, 2, 2)
    np.testing.assert_array_equal(model.f(xs)[2, 1], model.f(xs[2, 1]))


@pytest.mark.parametrize("factory", [builtin_pendulum, lambda: builtin_scalar_linear(2.0, 1.0)])
def test_check_jacobians_passes_on_builtins(factory):
    model = factory()
    points = np.random.default_rng(0).uniform(-2, 2, size=(100, model.state_dim))
    report = check_jacobians(model, points, rel_tol=1e-5)
    assert report.passed, report.max_deviation


def test_linear_jacobians_are_exact_up_to_rounding():
    model = builtin_scalar_linear(2.0, 1.0)
    points = np.random.default_rng(3).uniform(-2, 2, size=(20, 1))
    report = check_jacobians(model, points)
    assert max(report.max_deviation.values()) < 1e-9


def test_wrong_sign_jacobian_fails_with_deviation_two():
    good = builtin_pendulum()
    bad = SystemModel(name="bad", state_dim=2, control_dim=1, f=good.f, g=good.g,
                      kappa=good.kappa, df=lambda x: -good.df(x), dkappa=good.dkappa,
                      dg=good.dg)
    report = check_jacobians(bad, [[0.3, -0.4], [1.0, 0.5]])
    assert not report.passed
    assert report.max_deviation["df"] == pytest.approx(2.0, rel=1e-6)


def test_non_finite_output_names_map_and_point():
    good = builtin_scalar_linear(1.0, 1.0)
    bad = SystemModel(name="bad", state_dim=1, control_dim=1, f=lambda x: 1.0 / (x - 0.5),
                      g=good.g, kappa=good.kappa)
    with np.errstate(divide="ignore"), pytest.raises(ModelEvaluationError, match=r"f is not finite at x=\[0.5\]"):
        check_jacobians(bad, [[0.5]])


def test_shape_mismatch_is_a_definition_error():
    good = builtin_scalar_linear(1.0, 1.0)
    bad = SystemModel(name="bad", state_dim=1, control_dim=1, f=good.f,
                      g=lambda x: np.ones((2, 1)), kappa=good.kappa)
    with pytest.raises(ModelDefinitionError):
        eval_gdk(bad, [1.0])
    with pytest.raises(ModelDefinitionError):
        validate_point(bad, [1.0])


def test_missing_jacobians_fall_back_to_finite_differences():
    good = builtin_pendulum()
    fd = SystemModel(name="fd", state_dim=2, control_dim=1, f=good.f, g=good.g,
                     kappa=good.kappa)
    assert fd.jacobian_source["df"] is JacobianSource.FINITE_DIFFERENCE
    assert good.jacobian_source["df"] is JacobianSource.ANALYTIC
    x = np.array([0.4, -1.2])
    np.testing.assert_allclose(fd.jac_f(x), good.df(x), atol=1e-9)
    np.testing.assert_allclose(fd.jac_kappa(x), good.dkappa(x), atol=1e-9)
    np.testing.assert_allclose(fd.jac_g(x), good.dg(x), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 2, elements=finite))
def test_evaluation_is_pure(x):
    model = builtin_pendulum()
    for name in ("f", "g", "kappa", "df", "dkappa", "dg"):
        fun = getattr(model, name)
        assert np.array_equal(fun(x.copy()), fun(x.copy()))


def test_make_model_rejects_unknown_name():
    with pytest.raises(KeyError, match="unknown model"):
        make_model("lorenz")
    assert make_model("scalar_linear", a=1, k=2).params == {"a": 1.0, "k": 2.0, "sigma": 1.0}
