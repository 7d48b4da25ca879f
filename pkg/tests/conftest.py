import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))
os.environ.setdefault("NO_PROXY", "127.0.0.1,localhost")
os.environ["no_proxy"] = os.environ["NO_PROXY"]

from mockserver import MockWeb  # noqa: E402

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            n, title = mark.args
            _criteria.setdefault(n, {"title": title, "ok": True, "ran": False, "tests": []})
            _criteria[n]["tests"].append(item.nodeid)


def pytest_runtest_logreport(report):
    for n, info in _criteria.items():
        if report.nodeid in info["tests"]:
            if report.when == "call":
                info["ran"] = True
            if report.failed or (report.when == "call" and report.skipped):
                info["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        info = _criteria[n]
        status = "PASS" if info["ok"] and info["ran"] else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {info['title']}")


@pytest.fixture
def web():
    w = MockWeb().start()
    yield w
    w.stop()
