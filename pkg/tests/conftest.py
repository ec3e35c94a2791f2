import pytest

# criterion number -> list of (test name, passed, detail)
_OUTCOMES = {}
_DETAILS = {}


@pytest.fixture
def criterion_detail(request):
    """Callable storing a one-line measurement summary for the running test."""

    def record(text):
        _DETAILS[request.node.nodeid] = text

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        entry = (item.name, report.passed, _DETAILS.get(item.nodeid, ""))
        _OUTCOMES.setdefault(marker.args[0], []).append(entry)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        entries = _OUTCOMES[number]
        status = "PASS" if all(ok for _, ok, _ in entries) else "FAIL"
        details = "; ".join(f"{name}: {detail or ('ok' if ok else 'failed')}"
                            for name, ok, detail in entries)
        terminalreporter.write_line(f"criterion {number:>2} {status}  {details}")
