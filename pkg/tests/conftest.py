"""Collect acceptance outcomes and print one line per criterion at the end of the run."""

import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "passed": True, "seconds": 0.0, "metrics": []})
    entry["passed"] = entry["passed"] and not report.failed
    entry["seconds"] += report.duration
    if report.when == "call":
        entry["metrics"].extend(f"{k}={v}" for k, v in report.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        metrics = "; ".join(entry["metrics"])
        terminalreporter.write_line(
            f"criterion {number} {verdict}: {entry['title']} ({entry['seconds']:.1f} s) {metrics}".rstrip()
        )
