"""Shared test plumbing: collects the acceptance criteria verdicts and
prints them as a summary section, so they reach the terminal even when
pytest captures per-test stdout."""

CRITERION_LINES: list[str] = []


def record_criterion(line: str) -> None:
    CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)
