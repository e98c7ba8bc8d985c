import numpy as np
import pytest
from hypothesis import settings

from chaosid.dynamics import lorenz63_system, simulate

settings.register_profile("chaosid", deadline=None, max_examples=40)
settings.load_profile("chaosid")


@pytest.fixture(scope="session")
def lorenz_truth():
    """10001 spun-up states at dt = 0.01."""
    return simulate(lorenz63_system(), [8.0, 0.0, 30.0], 0.01, 10000, spinup=1000)


@pytest.fixture(scope="session")
def lorenz_holdout():
    return simulate(lorenz63_system(), [9.0, 1.0, 29.0], 0.01, 20000, spinup=1000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
