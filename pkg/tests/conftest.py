import numpy as np
import pytest

from lfiqt.phantom import PhantomSpec, make_phantom, scaled_spec


@pytest.fixture(scope="session")
def hard_phantom():
    spec = scaled_spec((64, 64, 64), boundary_softness=0.0, tissue_means=(100.0, 150.0, 30.0))
    return make_phantom(spec, seed=3)


@pytest.fixture(scope="session")
def soft_phantom():
    return make_phantom(PhantomSpec(), seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
