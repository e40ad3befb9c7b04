import time
from pathlib import Path

import pytest

from unemp.model import PAPER_VACANCY_FIT
from unemp.ocp import OcpProblem, solve
from unemp.presets import baseline_params, model_params

DATA = Path(__file__).parent / "data"

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def table4():
    return model_params("portugal-2004-2016")


@pytest.fixture
def table2():
    return baseline_params("munoli-gani-2016")


@pytest.fixture
def fourier():
    return PAPER_VACANCY_FIT


@pytest.fixture(scope="session")
def paper_solve():
    """Default solve of the paper-text problem at N=150 with its wall time."""
    prob = OcpProblem.from_preset("paper-text")
    t0 = time.perf_counter()
    sol = solve(prob)
    return sol, time.perf_counter() - t0


@pytest.fixture(scope="session")
def frozen_solve():
    prob = OcpProblem.from_preset("paper-text").frozen_controls()
    t0 = time.perf_counter()
    sol = solve(prob)
    return sol, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
