import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sbpls.energy import ScenarioPotentials
from sbpls.fields import Grid3
from sbpls.potentials import Bump, PotentialSpec
from sbpls.reduction import Box, ground_profile

settings.register_profile(
    "sbp", deadline=None, max_examples=int(os.environ.get("SBP_HYPOTHESIS_EXAMPLES", "25")),
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("sbp")

# (criterion number, line) pairs filled by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, str]] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


ZERO = PotentialSpec.constant(0.0)
ONE = PotentialSpec.constant(1.0)


@pytest.fixture(scope="session")
def prof2():
    return ground_profile(2.0)


@pytest.fixture(scope="session")
def prof3():
    return ground_profile(3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_box():
    return Box(8.0, 32)


@pytest.fixture(scope="session")
def grid32():
    return Grid3((0.0, 0.0, 0.0), 8.0, 32)


@pytest.fixture(scope="session")
def flat2():
    return ScenarioPotentials(ONE, ZERO, 2.0)


@pytest.fixture(scope="session")
def bump_V():
    return PotentialSpec(2.0, (Bump(-1.0, (0, 0, 0), 3.0), Bump(0.05, (0, 0, 0), 3.0, (2, 0, 0)), Bump(0.05, (0, 0, 0), 3.0, (3, 0, 0))))


@pytest.fixture(scope="session")
def bump_K():
    return PotentialSpec(0.0, (Bump(1.0, (0, 0, 0), 3.0, (2, 0, 0)), Bump(0.5, (0, 0, 0), 3.0, (0, 2, 0)), Bump(0.3, (0, 0, 0), 3.0, (0, 0, 2))))
