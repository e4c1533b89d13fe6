from __future__ import annotations

import pytest
from hypothesis import settings

from dlframing.scenario import Scenario

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def four_users():
    return Scenario.make(P=1.0, eps=1e-4, K=4, q=0.0, alphas=(1000,))


@pytest.fixture(scope="session")
def sixteen_users():
    return Scenario.make(P=1.0, eps=1e-4, K=16, q=0.5, alphas=(100,))


@pytest.fixture(scope="session")
def two_sizes():
    return Scenario.make(P=1.0, eps=1e-4, K=16, q=0.5, alphas=(50, 150), ps=(0.5, 0.5))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
