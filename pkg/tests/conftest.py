import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one summary line per acceptance criterion.

    Usage: ``criterion(3, ok, "detail")``. The line is printed immediately
    (visible with ``-s``) and repeated in the terminal summary.
    """
    def record(number, ok, detail=""):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        print(line)
        _LINES.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_LINES):
        terminalreporter.write_line(line)
