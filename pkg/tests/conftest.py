"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""
import pytest

_OUTCOMES = {}
_NOTES = {}


@pytest.fixture
def note(request):
    """Attach measured values to the criterion's summary line."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        if marker is not None:
            _NOTES.setdefault(marker.args[0], []).append(text)
    return add


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    prev = _OUTCOMES.get(number, (title, True))
    if report.when == "call" or failed:
        _OUTCOMES[number] = (title, prev[1] and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_OUTCOMES):
        title, ok = _OUTCOMES[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        if _NOTES.get(number):
            line += "  [" + "; ".join(_NOTES[number]) + "]"
        terminalreporter.write_line(line)
