from __future__ import annotations

import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reflectctl.hjb import solve
from reflectctl.suite import get, grid_for

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@functools.lru_cache(maxsize=None)
def solved(name: str, n: int):
    """Benchmark solve shared by every test in the session."""
    b = get(name)
    return solve(b.spec, grid_for(b, n))


@pytest.fixture(scope="session")
def solve_cache():
    return solved


_ACCEPTANCE: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


def band_region(grid, lo: float, hi: float, eps: float = 0.0):
    """Hand-built region with the same interval on every row."""
    from reflectctl.region import WaitingRegion

    n2 = grid.n2
    flags = np.zeros(n2, dtype=bool)
    return WaitingRegion(eps, grid.x2.copy(), np.full(n2, float(lo)), np.full(n2, float(hi)), grid, flags,
                         flags.copy(), flags.copy())


@pytest.fixture(scope="session")
def band():
    return band_region
