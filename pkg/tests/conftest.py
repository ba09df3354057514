import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, detail)`` records one acceptance line."""

    def record(number, name, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        line = f"criterion {number} {status}: {name}" + (f" ({detail})" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
