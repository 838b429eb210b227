"""Shared pytest wiring.

The acceptance tests in test_acceptance.py are numbered; echo one
summary line per criterion at the end of the run so the verdicts are
visible without scrolling through captured output.
"""

import re

_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status, word in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(status, ()):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if m:
                k = int(m.group(1))
                outcomes[k] = "FAIL" if outcomes.get(k) == "FAIL" else word
    if outcomes:
        terminalreporter.write_sep("-", "acceptance criteria")
        for k in sorted(outcomes):
            terminalreporter.write_line(f"CRITERION {k}: {outcomes[k]}")
