import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from alleletree.offspring import binary_law, binomial_mark, capped_geometric_law

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def binary_half():
    return binomial_mark(binary_law(), "1/2")


@pytest.fixture
def geometric_quarter():
    return binomial_mark(capped_geometric_law(), "1/4")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
