import numpy as np
import pytest

from sampledsde.models import SystemModel, builtin_pendulum, builtin_scalar_linear


def zero_drift_model(n: int = 2) -> SystemModel:
    """f = 0, g = 0, kappa = 0 with identity noise: X = x0 + eps W."""

    def f(x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (n, 1))

    def kappa(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1,))

    return SystemModel(name="zero", state_dim=n, control_dim=1, f=f, g=g, kappa=kappa)


@pytest.fixture
def pendulum():
    return builtin_pendulum()


@pytest.fixture
def linear():
    return builtin_scalar_linear(2.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
