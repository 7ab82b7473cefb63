import pytest

_acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collector for the per-criterion verdict lines.

    The lines are echoed in the terminal summary so they show up even when
    pytest captures stdout of passing tests.
    """
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
