import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pbqn.problems import make_diagonal_quadratic, make_synthetic_logistic  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_logistic():
    return make_synthetic_logistic(60, 8, np.random.default_rng(3), density=0.5)


@pytest.fixture
def small_quadratic():
    return make_diagonal_quadratic(12, 5, 0.2, 2.0, np.random.default_rng(4))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
