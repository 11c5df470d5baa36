from __future__ import annotations

import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from _acceptance import summary_lines  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
