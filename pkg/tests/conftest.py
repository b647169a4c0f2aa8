import pytest

_LINES_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a pass/fail line and asserts ``ok``."""
    lines = request.config.stash.setdefault(_LINES_KEY, [])

    def record(n, ok, detail):
        lines.append((n, f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"))
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(line)
