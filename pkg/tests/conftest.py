"""Shared test plumbing: the acceptance-criterion reporter.

Criterion tests call :func:`record_criterion`; the collected lines are
echoed in a dedicated terminal section at the end of the run, so the
verdicts are visible even with output capturing enabled.
"""

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
