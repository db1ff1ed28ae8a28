"""Collects acceptance-criterion outcomes and prints one line per criterion.

Tests opt in with ``@pytest.mark.criterion(number, title)``. A criterion
passes only if every test carrying its marker passed; measured values
recorded with ``record_property("detail", ...)`` are echoed next to it.
"""
import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = marker.args
        entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "details": []})
        entry["ok"] = entry["ok"] and rep.passed
        entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        e = _RESULTS[number]
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["details"])
        line = f"criterion {number:2d} {status}  {e['title']}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
