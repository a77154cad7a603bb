import functools
import math

import pytest
from hypothesis import settings

from mobiswarm import Mode, ScenarioConfig, Simulation

settings.register_profile("thorough", max_examples=1000, deadline=None, derandomize=True)
settings.load_profile("thorough")

KIB = 1024


def small_config(**overrides) -> ScenarioConfig:
    """A 20-peer swarm that finishes in well under a second of wall time."""
    base = dict(
        num_peers=20, num_seeders=2, mobile_fraction=0.5, file_size=1024 * 1024,
        sim_duration=900.0, rng_seed=0,
    )
    base.update(overrides)
    return ScenarioConfig(**base)


@functools.lru_cache(maxsize=None)
def _run(cfg: ScenarioConfig) -> Simulation:
    sim = Simulation(cfg)
    sim.run()
    return sim


def finished_run(cfg: ScenarioConfig) -> Simulation:
    """Run ``cfg`` once per test session and share the finished simulation."""
    return _run(cfg)


@pytest.fixture(params=[Mode.BASELINE, Mode.HYBRID], ids=lambda m: m.value)
def small_run(request) -> Simulation:
    return finished_run(small_config(mode=request.param))


@pytest.fixture(params=[(m, s) for m in (Mode.BASELINE, Mode.HYBRID) for s in (1, 2)],
                ids=lambda p: f"{p[0].value}-seed{p[1]}")
def small_runs(request) -> Simulation:
    mode, seed = request.param
    return finished_run(small_config(mode=mode, rng_seed=seed))


def approx_rel(a: float, b: float, rel: float = 1e-12) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)


# one line per acceptance criterion, printed after the run
CRITERIA: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> bool:
    CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
