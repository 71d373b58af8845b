from __future__ import annotations

import pytest

_CRITERIA: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            n, title = m.args
            _CRITERIA.setdefault(item.nodeid, {"n": n, "title": title, "outcome": None, "info": ""})


@pytest.fixture
def report(request):
    """Record a one-line summary for the acceptance table."""
    def add(text):
        entry = _CRITERIA.get(request.node.nodeid)
        if entry is not None:
            entry["info"] = f"{entry['info']}; {text}" if entry["info"] else text
    return add


def pytest_runtest_logreport(report):
    entry = _CRITERIA.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.failed:
        if entry["outcome"] != "FAIL":
            entry["outcome"] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    rows = sorted((e for e in _CRITERIA.values() if e["outcome"]), key=lambda e: e["n"])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for e in rows:
        line = f"C{e['n']:<3d} {e['outcome']:<5s} {e['title']}"
        if e["info"]:
            line += f"  [{e['info']}]"
        terminalreporter.write_line(line)
