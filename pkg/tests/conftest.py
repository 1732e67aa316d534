import numpy as np
import pytest

# criterion number -> (title, passed, detail); filled by acceptance tests
CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def detail(request):
    """Acceptance tests append measured values here; they end up on the summary line."""
    notes = []
    request.node.criterion_notes = notes
    return notes


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    notes = "; ".join(getattr(item, "criterion_notes", []))
    if report.failed:
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else ""
        notes = "; ".join(filter(None, [notes, msg]))
    CRITERIA[number] = (title, report.passed, notes)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, notes = CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))
