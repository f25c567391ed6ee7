import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shl.lattice import PeriodicGrid

settings.register_profile(
    "default", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


GRIDS = [PeriodicGrid(1, 16), PeriodicGrid(2, 8), PeriodicGrid(3, 4), PeriodicGrid(2, 8, 0.25)]


_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record ``(number, passed, detail)``; the lines are repeated in the terminal summary."""
    store = request.config.stash.setdefault(_RESULTS, [])

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        store.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_RESULTS, [])
    if store:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(store):
            terminalreporter.write_line(line)
