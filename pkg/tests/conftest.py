import re

import pytest

# criterion number -> (passed, detail); filled in by tests/test_acceptance.py
ACCEPTANCE = {}
CRITERIA = range(1, 11)


@pytest.fixture
def criterion():
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return record


def pytest_runtest_logreport(report):
    # a criterion test that crashed before recording still gets a FAIL line
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m and report.failed and int(m.group(1)) not in ACCEPTANCE:
        ACCEPTANCE[int(m.group(1))] = (False, f"error during {report.when}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in CRITERIA:
        if n not in ACCEPTANCE:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
