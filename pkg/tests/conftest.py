from __future__ import annotations

import _util


def pytest_terminal_summary(terminalreporter):
    if _util.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _util.VERDICTS:
            terminalreporter.write_line(line)
