import numpy as np
import pytest

from twotime.hilbert import OscillatorBasis
from twotime.pointer import PointerModel
from twotime.sqm import BinnedObservable

# lines collected by the acceptance tests, echoed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def basis():
    return OscillatorBasis()


@pytest.fixture(scope="session")
def obs8(basis):
    return BinnedObservable.uniform(8, basis)


@pytest.fixture(scope="session")
def pointer(obs8):
    return PointerModel.for_gap(obs8.min_gap, 8.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
