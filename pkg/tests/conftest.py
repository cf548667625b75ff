import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    import acceptance_support

    if not acceptance_support.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_support.summary_lines():
        terminalreporter.write_line(line)
