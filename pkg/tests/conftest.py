import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE: dict[str, list] = {}


@pytest.fixture
def acceptance():
    """Record (criterion, passed, detail); the summary prints one line per criterion."""

    def record(criterion: str, passed: bool, detail: str):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split(".")[0])):
        parts = _ACCEPTANCE[name]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {name}: {detail}")
