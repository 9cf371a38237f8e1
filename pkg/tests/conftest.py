import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit): acceptance criterion gate")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item._elapsed = time.perf_counter() - start


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title, limit = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "limit": limit, "ok": True, "elapsed": 0.0})
    if call.excinfo is not None:
        entry["ok"] = False
    if call.when == "call":
        entry["elapsed"] += getattr(item, "_elapsed", call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        # a criterion split over several tests is bounded by its total time
        status = "PASS" if entry["ok"] and entry["elapsed"] < entry["limit"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number:2d} {status}  {entry['title']}  "
            f"({entry['elapsed']:.2f} s, limit {entry['limit']} s)"
        )
