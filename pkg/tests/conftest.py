import pytest

from sotar.grid import TimeGrid
from sotar.network import build_paper_grid
from sotar.reliability import RobustnessWeights, solve_classic, solve_robust
from sotar.stochastic import build_network_kernels

PSI_SWEEP = (1.0, 0.9, 0.8, 0.7)
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def canon():
    return build_paper_grid()


@pytest.fixture(scope="session")
def canon_time():
    return TimeGrid(0.5, 80.0)


@pytest.fixture(scope="session")
def canon_kernels(canon, canon_time):
    net, params = canon
    return build_network_kernels(net, params, canon_time)


@pytest.fixture(scope="session")
def sweep(canon, canon_time, canon_kernels):
    net, _ = canon
    return {
        psi: solve_robust(net, canon_kernels, canon_time, RobustnessWeights.leading(psi, 2))
        for psi in PSI_SWEEP
    }


@pytest.fixture(scope="session")
def classic(canon, canon_time, canon_kernels):
    return solve_classic(canon[0], canon_kernels, canon_time)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
