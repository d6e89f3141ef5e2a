import numpy as np
import pytest

from spikefuse.events import generate_synthetic


@pytest.fixture(scope="session")
def tiny_synthetic():
    return generate_synthetic(2, (0.0, 0.0), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
