import pytest

from asianpde.pde import default_grid, solve_u2
from asianpde.strategy import MarketSpec, build_drift

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def ref_drift():
    """b(t) = 1 - t from r = 0, nu' = 0, rho = 1, T = 1."""
    return build_drift(MarketSpec(rate=0.0, maturity=1.0))


@pytest.fixture(scope="session")
def ref_solution(ref_drift):
    return solve_u2(ref_drift, default_grid(ref_drift, 1025, 1025))


@pytest.fixture(scope="session")
def ref_solution_fine(ref_drift):
    return solve_u2(ref_drift, default_grid(ref_drift, 2049, 2049))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
