import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stathedge import models
from stathedge.payoffs import CorrelatedCall, DiscreteStrikes, InstrumentSet

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIG2_STRIKES = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3)


@pytest.fixture(scope="session")
def fig2_model():
    return models.correlated_gbm(0.1, 0.1, 0.2, 0.2, 0.9)


@pytest.fixture(scope="session")
def fig2_moments(fig2_model):
    from stathedge.moments import discrete_moments
    inst = InstrumentSet(1.0, DiscreteStrikes(FIG2_STRIKES))
    return discrete_moments(fig2_model, inst, CorrelatedCall(1.0), 1.0)


@pytest.fixture(scope="session")
def fig1_moments():
    from stathedge.moments import continuous_moments
    from stathedge.payoffs import ContinuousBand
    out = {}
    for rho in (0.5, 0.55, 0.7, 0.9):
        m = models.correlated_gbm(0.1, 0.1, 0.2, 0.2, rho)
        out[rho] = continuous_moments(m, ContinuousBand(0.5, 1.5, 401), CorrelatedCall(1.0), 0.5)
    return out


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(5)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
