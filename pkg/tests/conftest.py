import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        CRITERIA[number] = line
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
