"""Shared expensive fixtures and the acceptance summary printer."""

import time

import numpy as np
import pytest

from qwte.evolver import EvolverConfig, bump_state, evolve
from qwte.mesh import default_grid
from qwte.sspe import continuation_in_rho, solve_profile

ACCEPTANCE_LINES: list = []
# wall-clock seconds of the session fixtures
TIMINGS: dict = {}


@pytest.fixture(scope="session")
def rho2_solution():
    """Converged rho = 2, M = 1 profile on the default grid, with its report."""
    t0 = time.perf_counter()
    out = solve_profile(1.0, 2.0, default_grid())
    TIMINGS["rho2_solution"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def rho2_profile(rho2_solution):
    return rho2_solution[0]


@pytest.fixture(scope="session")
def rho2_refined():
    """Same problem on the grid with every cell halved (N -> 2N - 1)."""
    return solve_profile(1.0, 2.0, default_grid().refined())


@pytest.fixture(scope="session")
def rho19_family():
    return continuation_in_rho(1.9, 5, mass=1.0, grid=default_grid())


@pytest.fixture(scope="session")
def bump_run():
    state = bump_state()
    cfg = EvolverConfig(10.0, tuple(np.linspace(0.0, 10.0, 41)))
    return state, evolve(state, cfg)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
