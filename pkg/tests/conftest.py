import pytest

from cookiewalk.env import FiniteEnvironment, TransientExample, placebo

ACCEPTANCE_LINES = []


@pytest.fixture
def te():
    return TransientExample()


@pytest.fixture
def flat():
    return placebo()


@pytest.fixture
def delta2():
    return FiniteEnvironment((5 / 6,) * 3)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
