import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cbfverify import DoubleIntegrator1D, HyperBox, example_1_network

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT2 = math.sqrt(2.0)

# acceptance results, printed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture
def record_acceptance():
    def record(number: int, name: str, passed: bool, detail: str = ""):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {name}"
        if detail:
            line += f": {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def e1_net():
    return example_1_network()


@pytest.fixture
def di_model():
    return DoubleIntegrator1D()


@pytest.fixture
def e2_box():
    return HyperBox([-0.1, -0.1], [0.0, 0.1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
