"""Shared test plumbing: collects acceptance-criterion verdicts and prints
them as a summary section at the end of the run."""

ACCEPTANCE_LINES = []


def record_criterion(number, description, passed):
    verdict = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"{verdict} criterion {number}: {description}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
