"""Shared pytest hooks.

Prints one uncaptured PASS/FAIL line per acceptance criterion so the result
of each contract is visible in the raw test log even though pytest captures
stdout of passing tests.
"""

import re

_CRITERION = re.compile(r"test_criterion_0*(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if m is None or report.when != "call":
        return
    number = int(m.group(1))
    label = m.group(2).replace("_", " ")
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {number} ({label}): {outcome}")
