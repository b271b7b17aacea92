import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the run
CRITERIA_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA_LINES):
        terminalreporter.write_line(CRITERIA_LINES[k])
