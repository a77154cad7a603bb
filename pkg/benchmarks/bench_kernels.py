"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--no-sim]

Times each kernel on inputs shaped like the ones the engine sees, then runs
one full default simulation per backend in a fresh interpreter (the backend
is chosen at import time through ``MOBISWARM_PURE``).
"""

import argparse
import os
import random
import subprocess
import sys
import timeit

from mobiswarm import _kernels_py

try:
    from mobiswarm import _ckernels
except ImportError:
    _ckernels = None


def kernel_cases(rng):
    # water_fill: a seeder planning over a handful of destinations
    weights = [rng.randint(1, 8) for _ in range(8)]
    caps = [rng.uniform(5_000, 500_000) for _ in range(8)]
    # pick_rarest: candidate pieces of a 16-piece file
    counts = [rng.randint(0, 50) for _ in range(16)]
    candidates = sorted(rng.sample(range(16), 10))
    keys = [rng.random() for _ in candidates]
    # window_sum: a 20 s rate window over a busy link
    times = sorted(rng.uniform(0, 100) for _ in range(400))
    amounts = [16_384] * len(times)
    return {
        "water_fill": lambda k: k.water_fill(102_400.0, weights, caps),
        "pick_rarest": lambda k: k.pick_rarest(counts, keys, candidates),
        "window_sum": lambda k: k.window_sum(times, amounts, 0, 80.0),
    }


SIM = """
import time
from mobiswarm import ScenarioConfig, Simulation, kernels
t = time.perf_counter()
Simulation(ScenarioConfig(rng_seed=0)).run()
print(kernels.BACKEND, time.perf_counter() - t)
"""


def time_sim(pure):
    env = dict(os.environ)
    env.pop("MOBISWARM_PURE", None)
    if pure:
        env["MOBISWARM_PURE"] = "1"
    out = subprocess.run([sys.executable, "-c", SIM], env=env, capture_output=True, text=True, check=True)
    backend, secs = out.stdout.split()
    return backend, float(secs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-sim", action="store_true", help="skip the full-simulation comparison")
    args = ap.parse_args()

    if _ckernels is None:
        print("compiled kernels are not built; only the pure-Python backend is available")
    backends = [("python", _kernels_py)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<12} " + " ".join(f"{name + ' us/call':>16}" for name, _ in backends) + f" {'speedup':>8}")
    for name, fn in kernel_cases(random.Random(0)).items():
        per_call = []
        for _, mod in backends:
            timer = timeit.Timer(lambda: fn(mod))
            n, _ = timer.autorange()
            per_call.append(min(timer.repeat(args.repeat, n)) / n * 1e6)
        speedup = f"{per_call[0] / per_call[1]:>7.1f}x" if len(per_call) == 2 else ""
        print(f"{name:<12} " + " ".join(f"{t:>16.3f}" for t in per_call) + f" {speedup:>8}")

    if not args.no_sim:
        print("\nfull default run (100 peers, 10 seeders, seed 0):")
        runs = [time_sim(pure=True)] + ([time_sim(pure=False)] if _ckernels else [])
        for backend, secs in runs:
            print(f"  {backend:<8} {secs:6.2f} s")


if __name__ == "__main__":
    main()
