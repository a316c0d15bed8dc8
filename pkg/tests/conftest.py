import numpy as np
import pytest

from snlslab.noise import build_noise_model, hermite_modes
from snlslab.spectral import make_grid

ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def grid():
    return make_grid(16.0, 256)


@pytest.fixture(scope="session")
def fine_grid():
    return make_grid(16.0, 512)


@pytest.fixture(scope="session")
def model(grid):
    return build_noise_model(grid, hermite_modes(4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
