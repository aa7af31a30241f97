import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN = Path(__file__).parent / "golden"

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _criteria.setdefault(num, {"title": title, "passed": 0, "failed": 0})
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        entry["passed" if rep.passed else "failed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if e["failed"] == 0 and e["passed"] > 0 else "FAIL"
        terminalreporter.write_line(
            f"criterion {num:>2} {status}  {e['title']}  ({e['passed']} passed, {e['failed']} failed)")


@pytest.fixture
def golden():
    return GOLDEN
