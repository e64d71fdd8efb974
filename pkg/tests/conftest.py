"""Collects the acceptance suite's PASS/FAIL lines and prints them as a
terminal section after the run, so they stay visible without -s."""

ACCEPTANCE_LINES = []


def record_line(line):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
