import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import report  # noqa: E402
from poisson_gauge import abs4, swap2  # noqa: E402



@pytest.fixture
def abs4_chain():
    return abs4()


@pytest.fixture
def swap2_chain():
    return swap2()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if report.LINES:
        terminalreporter.section("acceptance criteria")
        for line in report.LINES:
            terminalreporter.write_line(line)
