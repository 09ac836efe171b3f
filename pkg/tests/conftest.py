import numpy as np
import pytest

from nocprep import dynamics, noc


@pytest.fixture(scope="session")
def table1():
    return dynamics.TABLE1


@pytest.fixture(scope="session")
def nominal(table1):
    return dynamics.nominal_run(table1)


@pytest.fixture(scope="session")
def solution(table1, nominal):
    return noc.solve_noc(table1, nominal=nominal[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
