"""Reports one pass/fail line per acceptance criterion at the end of the run."""

import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion")


@pytest.fixture
def detail(request):
    """Let an acceptance test attach a one-line measurement to its report."""
    marker = request.node.get_closest_marker("criterion")

    def record(text):
        if marker is not None:
            _DETAILS[marker.args[0]] = text
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _RESULTS[num] = (title, rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        title, outcome = _RESULTS[num]
        flag = "PASS" if outcome == "passed" else "FAIL"
        extra = f" ({_DETAILS[num]})" if num in _DETAILS else ""
        terminalreporter.write_line(f"criterion {num:2d} {flag}: {title}{extra}")
