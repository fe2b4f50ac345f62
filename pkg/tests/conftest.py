import sys
from pathlib import Path

import pytest

# make tests/oracles.py importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

_CHECKS = []


@pytest.fixture
def criterion():
    """Record named pass/fail checks; they are listed at the end of the run."""
    checks = []

    def record(name, ok, detail=""):
        checks.append((name, bool(ok), detail))
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        return bool(ok)

    yield record
    _CHECKS.extend(checks)


def pytest_terminal_summary(terminalreporter):
    if not _CHECKS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CHECKS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
