import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
