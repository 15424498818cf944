from __future__ import annotations

from hypothesis import HealthCheck, settings

from budgetmech.core import Agent, Instance
from budgetmech.numbers import mpq

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_instance(B, pairs, *, theta=None, types=None, tids=None) -> Instance:
    agents = tuple(
        Agent(i, mpq(v), mpq(c), None if tids is None else tids[i]) for i, (v, c) in enumerate(pairs)
    )
    return Instance(mpq(B), agents, types, theta)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
