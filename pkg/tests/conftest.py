import numpy as np
import pytest

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties if k != "runtime")
        runtime = dict(item.user_properties).get("runtime")
        _CRITERIA[number] = (title, report.outcome, measured, runtime)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, measured, runtime = _CRITERIA[number]
        status = "PASS" if outcome == "passed" else "FAIL"
        extra = f" [{runtime}]" if runtime else ""
        terminalreporter.write_line(f"criterion {number:2d} {status}: {title}{extra} :: {measured}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def central_difference(loss, params, key, index, h=1e-6):
    """Two-sided difference of ``loss(params)`` in one parameter entry."""
    plus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    minus = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    plus[key].flat[index] += h
    minus[key].flat[index] -= h
    return (loss(plus) - loss(minus)) / (2 * h)
