"""Shared fixtures and the acceptance-summary reporter.

Acceptance tests register one (criterion, passed, detail) row each; the
terminal summary prints them even when everything passes, so a CI log always
shows the per-criterion verdicts.
"""

import numpy as np
import pytest

ACCEPTANCE_RESULTS = []


def record_acceptance(name: str, passed: bool, detail: str):
    ACCEPTANCE_RESULTS.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{verdict} {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
