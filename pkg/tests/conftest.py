import numpy as np
import pytest

from helpers import make_schema


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_schema():
    return make_schema()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the run summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
