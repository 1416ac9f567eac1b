import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _RESULTS.setdefault(number, (title, rep.passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, detail = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
