import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if item.module.__name__ != "test_acceptance" or not item.name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        number = int(item.name.split("_")[2])
        _verdicts[number] = ("PASS" if report.passed else "FAIL", (item.function.__doc__ or "").strip())


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        verdict, doc = _verdicts[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {doc}")
