import warnings

import pytest
from hypothesis import HealthCheck, settings

from dualpatrol.env import load_plan

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def plan():
    return load_plan("floorplan")


@pytest.fixture(scope="session")
def two_rooms():
    return load_plan("two_rooms")


@pytest.fixture(scope="session")
def small_room():
    return load_plan("small_room")


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
