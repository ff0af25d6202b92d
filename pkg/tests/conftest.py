import sys
from fractions import Fraction
from pathlib import Path

import pytest

from powerseek.mdp import TabularMdp

sys.path.insert(0, str(Path(__file__).parent))

F = Fraction


@pytest.fixture
def small_stochastic_mdp():
    # two actions at s0, a stochastic action at s1, terminal s3
    return TabularMdp.build(
        [
            [{1: F(1)}, {2: F(1, 3), 3: F(2, 3)}],
            [{0: F(1, 2), 2: F(1, 2)}, {3: F(1)}],
            [{2: F(1)}, {1: F(1)}],
            [],
        ],
        [3],
    )


@pytest.fixture
def trap_mdp():
    # s0 -> s1 w.p. 1/2 (then onto target s2), s3 trap w.p. 1/2
    return TabularMdp.build(
        [
            [{1: F(1, 2), 3: F(1, 2)}],
            [{2: F(1)}],
            [{2: F(1)}],
            [{3: F(1)}],
        ]
    )


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary, then assert."""

    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        assert passed, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
