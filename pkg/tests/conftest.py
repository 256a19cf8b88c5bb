import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


# Acceptance criteria reporting: one PASS/FAIL line per criterion, printed in
# the terminal summary so the lines survive pytest's output capture.
_ACCEPTANCE_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in str(item.fspath):
        return
    label = getattr(item, "_criterion_label", None)
    if label is not None:
        _ACCEPTANCE_RESULTS[label] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[label]
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{label}: {status}")
