import functools

import pytest

from ecmtumor import model, stationary, timedep
from ecmtumor.model import ModelParams

# Lines registered by test_acceptance; echoed in the terminal summary so the
# per-criterion verdicts are visible without -s.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def stationary_cached(mu: float = 0.5, grid_n: int = 1024) -> stationary.StationarySolution:
    p = ModelParams(mu=mu)
    return stationary.stationary_solution(p, model.default_laws(p), grid_n=grid_n)


@functools.lru_cache(maxsize=None)
def perturbed_run(mu: float, T: float = 40.0, n: int = 512, dt: float = 1e-3) -> timedep.TimeSeries:
    """Stationary state with E scaled by 1.05, marched to ``T``."""
    sol = stationary_cached(mu)
    p = sol.params
    init = timedep.initial_from_stationary(sol, n=n, amplitude=0.05)
    return timedep.simulate(p, model.default_laws(p), init, T=T, dt=dt, reference=sol)


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def laws(params):
    return model.default_laws(params)


@pytest.fixture(scope="session")
def sol05():
    return stationary_cached(0.5)
