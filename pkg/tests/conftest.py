import numpy as np
import pytest

from rdbridge.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def _float64_default():
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance line; returns ``ok`` so callers can ``assert record(...)``."""
    def _record(name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        _CRITERIA.append(line)
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" or not report.failed:
        return
    name = marker.args[0]
    if not any(line.split(" ", 1)[1].startswith(name) for line in _CRITERIA):
        _CRITERIA.append(f"FAIL {name}: {call.excinfo.typename}: {call.excinfo.value}")
