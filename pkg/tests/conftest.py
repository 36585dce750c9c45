"""Shared pytest hooks: a one-line-per-criterion acceptance summary."""

import pytest

_results: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    passed = report.passed if report.when == "call" else not report.failed
    if report.when == "setup" and passed:
        return
    previous = _results.get(number, (title, True))[1]
    _results[number] = (title, previous and passed)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, passed = _results[number]
        terminalreporter.write_line(f"AC{number:<2d} {'PASS' if passed else 'FAIL'}  {title}")
