import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_acceptance = {}


@pytest.fixture
def criterion():
    """Record a pass/fail line for an acceptance criterion; the test still asserts on its own."""

    def record(number, title, ok, detail=""):
        _acceptance[number] = (title, bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, ok, detail = _acceptance[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
