import pytest

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record ``(number, name, passed, detail)`` for the acceptance summary."""

    def record(number, name, passed, detail=""):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[k])
