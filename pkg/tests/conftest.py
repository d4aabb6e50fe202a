import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_RESULTS = []


def record_acceptance(number, title, status):
    ACCEPTANCE_RESULTS.append((number, title, status))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {number:>2} [{status}] {title}")
