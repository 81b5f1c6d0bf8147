import json
from pathlib import Path

import pytest

from pdscbf.scenarios import SCENARIO_NAMES, build_scenario

GOLDENS = Path(__file__).parent / "goldens" / "reference.json"

_criteria = {}



@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    entry = _criteria.setdefault(num, {"title": title, "passed": 0, "failed": [], "details": []})
    if rep.when == "call":
        if rep.passed:
            entry["passed"] += 1
        elif rep.failed:
            entry["failed"].append(item.name)
        for name, content in rep.user_properties:
            if name == "detail":
                entry["details"].append(content)
    elif rep.when == "setup" and rep.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        e = _criteria[num]
        status = "PASS" if not e["failed"] and e["passed"] else "FAIL"
        total = e["passed"] + len(e["failed"])
        line = f"criterion {num}: {status}  {e['title']} ({e['passed']}/{total} checks)"
        if e["failed"]:
            line += "  failing: " + ", ".join(e["failed"])
        tr.write_line(line)
        for d in e["details"]:
            tr.write_line(f"    {d}")


@pytest.fixture(scope="session")
def goldens():
    return json.loads(GOLDENS.read_text())


@pytest.fixture(scope="session")
def scenario_cache():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = build_scenario(name)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def all_scenarios():
    return list(SCENARIO_NAMES)
