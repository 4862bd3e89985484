import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import acceptance_log  # noqa: E402

SUITE_BUDGET = 300.0
_start = [0.0]


def pytest_sessionstart(session):
    _start[0] = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = list(acceptance_log.LINES)
    if not lines:
        return
    elapsed = time.perf_counter() - _start[0]
    stats = terminalreporter.stats
    bad = len(stats.get("failed", [])) + len(stats.get("error", []))
    ran = len(stats.get("passed", [])) + bad + len(stats.get("xfailed", []))
    ok = bad == 0 and elapsed <= SUITE_BUDGET
    lines.append(f"A8 {'PASS' if ok else 'FAIL'}: {ran} tests, {bad} failing, suite time {elapsed:.1f} s (budget {SUITE_BUDGET:.0f} s)")
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: s.split(" ", 1)[0]):
        terminalreporter.write_line(line)
