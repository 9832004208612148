import pytest

from ehcell import analytic as an
from ehcell.config import NetworkConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def desk():
    return NetworkConfig.desk()


@pytest.fixture(scope="session")
def desk_solution(desk):
    return an.solve_stationary(desk)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
