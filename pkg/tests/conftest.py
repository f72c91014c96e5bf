import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import time

import pytest

from impactplan.planner import load_scenario, plan_scenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


class Timed:
    def __init__(self, sc, plan, seconds):
        self.sc, self.plan, self.seconds = sc, plan, seconds


def _timed_plan(name, mode=None):
    sc = load_scenario(SCENARIOS / f"{name}.json")
    if mode:
        sc = sc.with_mode(mode)
    t = time.perf_counter()
    plan = plan_scenario(sc)
    return Timed(sc, plan, time.perf_counter() - t)


@pytest.fixture(scope="session")
def corridor():
    return _timed_plan("corridor")


@pytest.fixture(scope="session")
def corridor_robust():
    return _timed_plan("corridor_robust")


@pytest.fixture(scope="session")
def throw_catch():
    return _timed_plan("throw_and_catch")



_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(capsys):
    """Record one pass/fail line per acceptance criterion."""
    def emit(num, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {text}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
