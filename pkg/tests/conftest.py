import numpy as np
import pytest

from emot import DiscreteMeasure, ProblemInstance, CostTensor, center_means, iterate
from emot.market import HestonParams, build_instance, simulate_heston
from emot.oracle import small_fixture

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report():
    def report(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


@pytest.fixture(scope="session")
def table_sample():
    return simulate_heston(HestonParams())


@pytest.fixture(scope="session")
def table_instance(table_sample):
    with pytest.warns(UserWarning):
        return build_instance(table_sample)


@pytest.fixture(scope="session")
def table_result(table_instance):
    centered, _ = center_means(table_instance)
    return iterate(centered)


@pytest.fixture
def fixture_instance():
    return small_fixture()


def make_instance(x, mu, y, nu, cost=None, z=(0.0,), rho=(1.0,)):
    mu_m = DiscreteMeasure(x, mu)
    nu_m = DiscreteMeasure(y, nu)
    rho_m = DiscreteMeasure(z, rho)
    shape = (len(x), len(y), len(z))
    cost = CostTensor(np.zeros(shape) if cost is None else cost)
    return ProblemInstance(mu_m, nu_m, rho_m, cost)
