import pytest

CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one acceptance line."""
    def record(n, passed, detail):
        CRITERIA[n] = (bool(passed), detail)
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
