import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfb import scenarios

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def lq():
    return scenarios.lq1d()


@pytest.fixture
def mu0():
    return scenarios.lq1d_mu0()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(12345))


def pytest_terminal_summary(terminalreporter):
    from ._acceptance import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
