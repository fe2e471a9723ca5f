"""Shared hooks: the acceptance suite's one-line verdicts are echoed at the end of the run."""

VERDICTS = []


def record(number: int, ok: bool, detail: str) -> None:
    VERDICTS.append((number, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
