import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = {}


def record(number, passed, detail=""):
    """Remember one acceptance verdict; the last record for a number wins."""
    line = f"CRITERION {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
