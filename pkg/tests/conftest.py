"""Collects the acceptance one-liners and echoes them after the test run."""

ACCEPTANCE_LINES = []


def record_acceptance(num: int, ok: bool, detail: str) -> None:
    """Append the line before asserting so failures still show up."""
    ACCEPTANCE_LINES.append(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
