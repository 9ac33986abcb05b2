import pytest

_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one summary line; all lines are printed after the test run."""

    def report(number, passed, detail, seconds, limit=None):
        ok = passed and (limit is None or seconds < limit)
        verdict = "PASS" if ok else "FAIL"
        bound = "no limit" if limit is None else f"limit {limit}s"
        line = f"criterion {number}: {verdict}  {detail}; runtime {seconds:.1f}s ({bound})"
        _LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: (len(s.split(":")[0]), s)):
            terminalreporter.write_line(line)
