import pytest

_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _LINES


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
