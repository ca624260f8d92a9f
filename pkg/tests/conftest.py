"""Shared pytest hooks: per-criterion pass/fail lines for the acceptance suite."""

import re

_CRITERION_PATTERN = re.compile(r"test_criterion_(\d+)[a-z]?_?(.*)")
_outcomes: dict[str, list] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    match = _CRITERION_PATTERN.search(report.nodeid)
    if not match:
        return
    num = int(match.group(1))
    label = match.group(2) or "criterion"
    _outcomes.setdefault(f"{num:02d} {label}", []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_outcomes):
        outcomes = _outcomes[key]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        num, label = key.split(" ", 1)
        terminalreporter.write_line(
            f"ACCEPTANCE {int(num):2d} [{verdict}] {label}")
