"""Prints one PASS/FAIL line per acceptance criterion at the end of the run."""
import pytest

_outcomes: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _outcomes.setdefault(number, {"title": title, "ok": True, "detail": ""})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["detail"] = "; ".join(str(v) for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        e = _outcomes[number]
        line = f"[{'PASS' if e['ok'] else 'FAIL'}] {number:2d}. {e['title']}"
        terminalreporter.write_line(line + (f"  ({e['detail']})" if e["detail"] else ""))
    passed = sum(e["ok"] for e in _outcomes.values())
    terminalreporter.write_line(f"{passed}/{len(_outcomes)} criteria passed")
