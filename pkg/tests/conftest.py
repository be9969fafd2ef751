import pytest

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): exit criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, [title, True, 0])
    if rep.failed:
        entry[1] = False
    if rep.when == "call":
        entry[2] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_criteria):
        title, ok, ran = _criteria[number]
        status = "PASS" if ok and ran else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
