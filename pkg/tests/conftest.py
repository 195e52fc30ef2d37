import pytest

from cyclelab.quotient import CycleCentralData
from cyclelab.system import CycleSpec, build_model
from cyclelab.tower import TowerConfig, build_tower


@pytest.fixture(scope="session")
def default_system():
    return build_model(CycleSpec(CycleCentralData()))


@pytest.fixture(scope="session")
def half_system():
    """lambda = 0.5, beta = 2, tau = +1 with s = u = 1."""
    data = CycleCentralData(lam=0.5, beta=2.0, tau=1)
    return build_model(CycleSpec(data, rho_s=0.25, rho_u=4.0))


@pytest.fixture(scope="session")
def default_tower(default_system):
    return build_tower(default_system, TowerConfig())


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: int(x.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
