"""Shared pytest hooks: print one line per acceptance criterion."""

_acceptance_outcomes = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_outcomes[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in sorted(_acceptance_outcomes.items()):
        label = nodeid.split("::")[-1]
        flag = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"[{flag}] {label}")
