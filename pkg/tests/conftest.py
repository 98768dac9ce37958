import pytest

from rawhfl.config import desk_profile
from rawhfl.experiment import run_experiment

_RUNS = {}


def desk_run(algorithm, seed, Z=2, **overrides):
    """Desk-scale experiment, computed once per session."""
    key = (algorithm, seed, Z, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        cfg = desk_profile(**{"algorithm": algorithm, "seed": seed, "planner.Z": Z, **overrides})
        _RUNS[key] = run_experiment(cfg)
    return _RUNS[key]


@pytest.fixture(scope="session")
def desk_runs():
    return desk_run


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
