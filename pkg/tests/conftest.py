"""Shared pytest wiring.

Tests marked `criterion(n, title)` each get a [PASS]/[FAIL] verdict line in
the terminal summary, so the acceptance gate can be read off the bottom of a
verbose run without digging through node ids.
"""

import pytest

_CRITERIA: dict[str, tuple[int, str]] = {}
_OUTCOMES: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, title): acceptance check reported as a summary verdict line",
    )


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            _CRITERIA[item.nodeid] = (marker.args[0], marker.args[1])


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if item.nodeid in _CRITERIA:
        if report.when == "call":
            _OUTCOMES[item.nodeid] = "PASS" if report.passed else "FAIL"
        elif not report.passed:  # setup/teardown crash counts as a failure
            _OUTCOMES[item.nodeid] = "FAIL"
    return report


def pytest_terminal_summary(terminalreporter):
    ran = {n: v for n, v in _OUTCOMES.items() if n in _CRITERIA}
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (num, title) in sorted(_CRITERIA.items(), key=lambda kv: kv[1][0]):
        if nodeid in ran:
            terminalreporter.write_line(f"[{ran[nodeid]}] {num:2d}. {title}")
