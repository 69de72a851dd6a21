"""Shared test fixtures: collects the acceptance-criterion verdict lines and
prints them at the end of the run."""

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"criterion {number} [{title}]: {status}"
    if detail:
        line += f" — {detail}"
    _ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
