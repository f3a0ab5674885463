import pytest

from herdbif.model import BASE_PARAMS, FIG1_PARAMS

_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; all lines are printed at the end of the run."""

    def add(line: str):
        _ACCEPTANCE_LINES.append(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1():
    return FIG1_PARAMS


@pytest.fixture(scope="session")
def base():
    return BASE_PARAMS
