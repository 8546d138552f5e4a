import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=300, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Record (criterion -> pass/fail, detail); printed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


BENCH_BOUNDS = dict(lower=[2, 2, 0.1, 0.1], upper=[32, 32, 4, 4], integer=[0, 1])
BENCH_D0 = (12.0, 21.0, 1.7, 2.6)
BENCH_SEEDS = range(10)
BENCH_BUDGET = 50


@pytest.fixture(scope="session")
def benchmark_runs():
    """Paired 50-iteration BO and random-search runs on the quadratic benchmark."""
    from covert_srl.optimizer import Bounds, optimize, quadratic_benchmark, random_search

    bounds = Bounds.from_dict(BENCH_BOUNDS)
    f = quadratic_benchmark(BENCH_D0)
    runs = []
    for seed in BENCH_SEEDS:
        bo = optimize(f, bounds, BENCH_BUDGET, seed)
        rs = random_search(f, bounds, BENCH_BUDGET, seed)
        runs.append((seed, bo, rs))
    return bounds, runs
