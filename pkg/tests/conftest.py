"""Prints one PASS/FAIL line per acceptance criterion at the end of the session."""
import re

_CRITERIA: dict[str, dict] = {}
_NAME = re.compile(r"test_acceptance\.py::test_(a\d+)_")
# criteria spread over several tests are timed here; the others time themselves
_BUDGETS = {"A7": 120.0}


def pytest_runtest_logreport(report):
    m = _NAME.search(report.nodeid)
    if not m or (report.when != "call" and report.passed):
        return
    entry = _CRITERIA.setdefault(m.group(1).upper(), {"ok": True, "seconds": 0.0, "details": []})
    entry["ok"] = entry["ok"] and report.passed
    entry["seconds"] += report.duration
    entry["details"] += [str(v) for k, v in report.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda x: int(x[1:])):
        entry = _CRITERIA[name]
        budget = _BUDGETS.get(name)
        ok = entry["ok"] and (budget is None or entry["seconds"] < budget)
        status = "PASS" if ok else "FAIL"
        detail = "; ".join(entry["details"])
        if budget is not None:
            detail = f"{detail} budget {budget:.0f}s".strip()
        terminalreporter.write_line(f"{name} {status} ({entry['seconds']:.1f}s) {detail}")
