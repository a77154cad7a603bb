import hashlib
import os
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from mobiswarm import _kernels_py as py

ck = pytest.importorskip("mobiswarm._ckernels")


@given(
    st.floats(0.0, 1e7, allow_nan=False),
    st.lists(st.tuples(st.integers(1, 40), st.floats(0.0, 1e7, allow_nan=False)), max_size=16),
)
def test_water_fill_backends_agree(total, slots):
    weights = [w for w, _ in slots]
    caps = [c for _, c in slots]
    assert ck.water_fill(total, weights, caps) == py.water_fill(total, weights, caps)


@given(st.data())
def test_pick_rarest_backends_agree(data):
    counts = data.draw(st.lists(st.integers(0, 50), min_size=1, max_size=40))
    candidates = data.draw(st.lists(st.integers(0, len(counts) - 1), max_size=40))
    keys = data.draw(st.lists(st.floats(0, 1, exclude_max=True), min_size=len(candidates), max_size=len(candidates)))
    assert ck.pick_rarest(counts, keys, candidates) == py.pick_rarest(counts, keys, candidates)


@given(st.lists(st.tuples(st.floats(0, 1e4), st.integers(0, 10**6)), max_size=40), st.floats(-1, 1e4),
       st.integers(0, 40))
def test_window_sum_backends_agree(rows, cutoff, start):
    times = sorted(t for t, _ in rows)
    amounts = [a for _, a in rows]
    start = min(start, len(times))
    assert ck.window_sum(times, amounts, start, cutoff) == py.window_sum(times, amounts, start, cutoff)


RUN = """
import hashlib
from mobiswarm import Mode, ScenarioConfig, Simulation, kernels
sim = Simulation(ScenarioConfig(num_peers=20, num_seeders=2, file_size=1 << 20, sim_duration=900.0,
                                mode=Mode.HYBRID, rng_seed=4))
sim.run()
print(kernels.BACKEND, hashlib.sha256(repr(sim.events).encode()).hexdigest())
"""


def _run(pure):
    env = dict(os.environ)
    env.pop("MOBISWARM_PURE", None)
    if pure:
        env["MOBISWARM_PURE"] = "1"
    out = subprocess.run([sys.executable, "-c", RUN], env=env, capture_output=True, text=True, check=True)
    return out.stdout.split()


def test_pure_fallback_selected_by_env_and_identical():
    compiled = _run(pure=False)
    pure = _run(pure=True)
    assert compiled[0] == "cython"
    assert pure[0] == "python"
    assert compiled[1] == pure[1]
