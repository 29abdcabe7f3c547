import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, settings

from friendbounds.data import ObservationTable

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_table(rows, **extra):
    frame = pd.DataFrame(rows, columns=["id", "school", "grade", "age"])
    for k, v in extra.items():
        frame[k] = v
    return ObservationTable.from_frame(frame)


@pytest.fixture
def three_peers():
    return make_table([(1, 1, 9, 14.0), (2, 1, 9, 13.5), (3, 1, 9, 13.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 10


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(lines.get(k, f"criterion {k:>2}: NOT RUN  (deselected, or errored before a verdict)"))


@pytest.fixture
def verdict(request):
    store = request.config.stash[ACCEPTANCE]

    def record(number: int, checks: dict, detail: str = "") -> bool:
        ok = all(checks.values())
        failed = [name for name, good in checks.items() if not good]
        tail = f"  failed: {', '.join(failed)}" if failed else ""
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}{tail}"
        store[number] = line
        print(line)
        return ok

    return record
