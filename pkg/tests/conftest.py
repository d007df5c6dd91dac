import numpy as np
import pytest

from nlsblowup.fields import make_grid
from nlsblowup.groundstate import ground_state

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def gs1():
    return ground_state(1)


@pytest.fixture(scope="session")
def gs2():
    return ground_state(2)


@pytest.fixture(scope="session")
def grid1():
    return make_grid(1, 20.0, 4096)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
