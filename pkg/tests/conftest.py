import re

import pytest

_lines: dict[str, str] = {}


def _criterion_of(name: str) -> str | None:
    m = re.match(r"test_ac(\d+)", name)
    return f"AC{int(m.group(1))}" if m else None


@pytest.fixture
def acceptance(request):
    """``record(passed, detail)`` stores the one-line verdict for the calling criterion."""
    crit = _criterion_of(request.node.name)

    def record(passed: bool, detail: str):
        line = f"{crit:<5} {'PASS' if passed else 'FAIL'}  {detail}"
        _lines[crit] = line
        print(line)
        return passed

    return record


def pytest_runtest_logreport(report):
    crit = _criterion_of(report.nodeid.split("::")[-1])
    if crit and report.when == "call" and report.failed and crit not in _lines:
        _lines[crit] = f"{crit:<5} FAIL  raised before a verdict: {report.longrepr.reprcrash.message.splitlines()[0]}" \
            if hasattr(report.longrepr, "reprcrash") else f"{crit:<5} FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_lines, key=lambda c: int(c[2:])):
        terminalreporter.write_line(_lines[crit])
