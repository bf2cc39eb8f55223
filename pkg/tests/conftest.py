import numpy as np
import pytest
from hypothesis import settings

from samdp.core import PerturbationMap, TabularSaMdp
from samdp.harness.checks import random_battery

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def battery():
    return random_battery(8, seed=3)


def chain_mdp(gamma=0.9):
    """Two states; action 0 stays, action 1 moves to the other state. Reward 1 in state 1."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    P[0, 1, 1] = P[1, 1, 0] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularSaMdp(P, R, gamma, np.array([1.0, 0.0]), PerturbationMap.identity(2), name="chain")


def single_state_mdp(r=1.0, gamma=0.9):
    return TabularSaMdp(np.ones((1, 1, 1)), np.array([[r]]), gamma, np.ones(1), PerturbationMap.identity(1), name="one")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
