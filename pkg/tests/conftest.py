import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ringsum.grid import GridConfig

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

# Toy cells for the four-city example stream.
COLUMBUS, DALLAS, NEW_YORK, CHICAGO = 11, 22, 33, 44
TOY_STREAM = [COLUMBUS, DALLAS, DALLAS, NEW_YORK, COLUMBUS, DALLAS]


@pytest.fixture(scope="session")
def grid10():
    return GridConfig(cell_size_deg=10.0)


@pytest.fixture(scope="session")
def grid1():
    return GridConfig(cell_size_deg=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance verdicts, echoed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
