import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import support


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if support.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in support.acceptance_lines:
            terminalreporter.write_line(line)
