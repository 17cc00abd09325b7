import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit): acceptance criterion with a time limit [s]")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title, limit = mark.args
    elapsed = dict(item.user_properties).get("elapsed")
    if report.when == "call" or (report.when == "setup" and report.failed):
        _RESULTS[number] = (title, limit, report.passed, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, limit, passed, elapsed = _RESULTS[number]
        took = "n/a" if elapsed is None else f"{elapsed:.2f} s"
        verdict = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {title}  ({took}, limit {limit} s)")
