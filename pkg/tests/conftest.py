import sys
from pathlib import Path

# the oracle helpers live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

# acceptance verdicts, filled by test_acceptance.py and printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
