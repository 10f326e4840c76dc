"""Collects per-criterion outcomes of the acceptance suite and prints one line for each."""
import pytest

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        entry = _criteria.setdefault(mark.args[0], {"title": mark.args[1], "parts": []})
        notes = [f"{k}={v}" for k, v in item.user_properties]
        entry["parts"].append((item.name, rep.outcome, notes))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        ok = all(outcome == "passed" for _, outcome, _ in entry["parts"])
        failed = [name for name, outcome, _ in entry["parts"] if outcome != "passed"]
        notes = [n for _, _, ns in entry["parts"] for n in ns]
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {entry['title']}"
        if failed:
            line += f" [failed: {', '.join(failed)}]"
        if notes:
            line += f" ({'; '.join(notes)})"
        terminalreporter.write_line(line)
