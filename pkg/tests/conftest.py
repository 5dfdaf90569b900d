"""Shared pytest plumbing: collects the one-line acceptance verdicts and
replays them in the terminal summary, where output capture cannot hide them."""

import pytest


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Append-and-print logger for the acceptance suite's PASS/FAIL lines."""

    def log(line: str) -> None:
        request.config._acceptance_lines.append(line)
        print(line, flush=True)

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(lines):
            terminalreporter.write_line(line)
