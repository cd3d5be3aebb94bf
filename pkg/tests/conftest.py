import re
from collections import defaultdict

import pytest

_CRITERION = re.compile(r"test_criterion_(\d+)")
_outcomes = defaultdict(list)
_details = defaultdict(list)


@pytest.fixture
def record_detail(request):
    """Attach a one-line measurement to the criterion of the calling test."""
    match = _CRITERION.search(request.node.name)

    def record(text):
        if match:
            _details[int(match.group(1))].append(text)

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    match = _CRITERION.search(item.name)
    if match and (report.when == "call" or report.failed):
        _outcomes[int(match.group(1))].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        status = "PASS" if all(_outcomes[number]) else "FAIL"
        detail = "; ".join(_details[number])
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
