import numpy as np
import pytest

from lbmlab.coefficients import make_preset
from lbmlab.field import GridSpec, sample_field
from lbmlab.kernels import KernelParams


@pytest.fixture(scope="session")
def small_params():
    return KernelParams.dyadic(1.0, 3, 1.0)


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec((-4.0, -4.0), (8.0, 8.0), (17, 17))


@pytest.fixture(scope="session")
def small_field(small_params, small_grid):
    return sample_field(small_params, small_grid, seed=11)


@pytest.fixture(scope="session")
def lbm_spec(small_field):
    return make_preset("lbm", {"field": small_field})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record the one-line verdict of an acceptance criterion for the run summary."""
    def log(k, line):
        _ACCEPTANCE_LINES[k] = line
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[k])
