import pytest
from hypothesis import settings

from switchrep.game import GameParams, UpdateRule
from switchrep.switched import SwitchSchedule

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

OMEGA, K, B, C, T = 0.01, 4, 2.0, 0.2, 5.0


@pytest.fixture
def params():
    return GameParams(OMEGA, K, B, C)


def two_rule(first: str, second: str, t1: float, p: GameParams = None) -> SwitchSchedule:
    p = p or GameParams(OMEGA, K, B, C)
    make = {"PC": UpdateRule.pc, "IM": UpdateRule.im}
    return SwitchSchedule.two_rules(make[first](p), make[second](p), t1, T)


# (label, order, t1, expected sign of the drift sum)
SCENARIOS = [
    ("2a", ("PC", "IM"), 2.0, 1),
    ("2b", ("PC", "IM"), 3.0, -1),
    ("3a", ("IM", "PC"), 3.0, 1),
    ("3b", ("IM", "PC"), 2.0, -1),
]


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
