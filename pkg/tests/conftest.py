from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
_verdicts = []


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _verdicts.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
