"""Shared pytest plumbing: the acceptance-criterion summary section.

Acceptance tests record one PASS/FAIL line per criterion through the
`criterion_log` fixture; the lines are echoed immediately and repeated
in a dedicated section at the end of the run so a plain `pytest -v`
leaves a readable verdict trail.
"""

import pytest


@pytest.fixture(scope="session")
def criterion_log(request):
    cfg = request.config
    if not hasattr(cfg, "_criterion_lines"):
        cfg._criterion_lines = []

    def record(line: str) -> None:
        cfg._criterion_lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criterion_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
