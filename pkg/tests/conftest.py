import numpy as np
import pytest

from bsde_smp import Dimensions, TimeGrid, sample_brownian

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def bundle_small():
    return sample_brownian(TimeGrid(1.0, 32), Dimensions(1, 1, 1), 2000, seed=3)


@pytest.fixture(scope="session")
def bundle_64():
    return sample_brownian(TimeGrid(1.0, 64), Dimensions(1, 1, 1), 2000, seed=5)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[cid])
