"""Command-line experiment runner.

    mobiswarm run     --config scen.ini --mode both --seeds 0-9 --out results
    mobiswarm compare --out results
    mobiswarm sweep   --config scen.ini --seeds 0-9 --out results

``run`` writes ``<out>/<mode>/seed-<n>/{summary,timeseries}.csv``. ``compare``
pairs ``<out>/baseline`` with ``<out>/hybrid`` and writes ``<out>/compare.csv``.
``sweep`` does both.

Exit status: 0 on success, 1 on a configuration or input error (nothing is
written), 2 when a run breaks a simulation invariant.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import re
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

from mobiswarm.config import ScenarioConfig, load_config
from mobiswarm.engine import Simulation
from mobiswarm.errors import ConfigError, SimulationError
from mobiswarm.hybrid import Mode
from mobiswarm.metrics import _cell, emit_csv, read_csv

log = logging.getLogger("mobiswarm")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INVARIANT = 2

LOG_LEVELS = {"off": None, "info": logging.INFO, "debug": logging.DEBUG}

COMPARE_COLUMNS = (
    "seed", "d_mean_latency", "d_mean_latency_mobile", "d_c_avg", "d_completion_time",
    "checkpoint", "blocks_baseline", "blocks_hybrid", "extra_blocks_pct",
)


class UsageError(Exception):
    """Bad command-line input; reported with exit status 1."""


@dataclass
class RunSpec:
    config: ScenarioConfig
    modes: list
    seeds: list
    out: str
    jobs: int


def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"1,4,7"``, ``"0-9"``, ``"0..9"`` or a mix like ``"0-4,9"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        m = re.fullmatch(r"(\d+)\s*(?:-|\.\.)\s*(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        elif re.fullmatch(r"\d+", part):
            seeds.append(int(part))
        else:
            raise UsageError(f"bad seed list {text!r}")
    if not seeds:
        raise UsageError("seed list is empty")
    return sorted(set(seeds))


def setup_logging(env: Optional[str] = None) -> None:
    value = (os.environ.get("MOBISWARM_LOG", "off") if env is None else env).strip().lower() or "off"
    if value not in LOG_LEVELS:
        raise UsageError(f"MOBISWARM_LOG must be one of off, info, debug (got {value!r})")
    level = LOG_LEVELS[value]
    log.handlers.clear()
    log.propagate = False
    if level is None:
        log.setLevel(logging.CRITICAL + 1)
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(level)


def run_dir(out: str, mode: Mode, seed: int) -> str:
    return os.path.join(out, mode.value, f"seed-{seed}")


def _execute(cfg: ScenarioConfig, out: str) -> tuple[str, int, Optional[str]]:
    """Run one (mode, seed) pair and write its CSVs. Returns an error string on failure."""
    sim = Simulation(cfg)
    try:
        metrics = sim.run()
    except SimulationError as exc:
        return cfg.mode.value, cfg.rng_seed, str(exc)
    if sim.violations:
        first = sim.violations[0]
        return cfg.mode.value, cfg.rng_seed, f"{len(sim.violations)} invariant violations, first {first!r}"
    emit_csv(metrics, run_dir(out, cfg.mode, cfg.rng_seed))
    return cfg.mode.value, cfg.rng_seed, None


def execute(spec: RunSpec) -> int:
    jobs = [spec.config.replace(mode=mode, rng_seed=seed) for mode in spec.modes for seed in spec.seeds]
    workers = max(1, min(spec.jobs, len(jobs)))
    log.info("running %d simulations on %d worker(s)", len(jobs), workers)
    if workers == 1:
        results = [_execute(cfg, spec.out) for cfg in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_execute, jobs, [spec.out] * len(jobs)))
    status = EXIT_OK
    for mode, seed, err in results:
        if err is not None:
            print(f"error: {mode} seed {seed}: {err}", file=sys.stderr)
            status = EXIT_INVARIANT
        else:
            log.info("wrote %s", run_dir(spec.out, Mode(mode), seed))
    return status


# ------------------------------------------------------------------ compare

def _seed_dirs(mode_dir: str) -> dict[int, str]:
    if not os.path.isdir(mode_dir):
        raise UsageError(f"no run directory {mode_dir}")
    found = {}
    for name in os.listdir(mode_dir):
        m = re.fullmatch(r"seed-(\d+)", name)
        if m:
            found[int(m.group(1))] = os.path.join(mode_dir, name)
    if not found:
        raise UsageError(f"no seed-<n> directories in {mode_dir}")
    return found


def _load_run(path: str) -> tuple[dict, list[dict]]:
    try:
        summary = read_csv(os.path.join(path, "summary.csv"))
        series = read_csv(os.path.join(path, "timeseries.csv"))
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read run output in {path}: {exc}") from None
    if len(summary) != 1:
        raise UsageError(f"{path}/summary.csv must hold exactly one row")
    return summary[0], series


def blocks_at(series: Sequence[dict], t: float) -> int:
    """Cumulative delivered blocks at the last sample taken at or before ``t``."""
    count = 0
    for row in series:
        if row["t"] > t:
            break
        count = row["cumulative_blocks"]
    return count


def _completion(row: dict) -> float:
    c = row["completion_time"]
    return row["end_time"] if math.isnan(c) else c


def compare_runs(baseline_dir: str, hybrid_dir: str, checkpoint_frac: float) -> list[dict]:
    """Per-seed deltas (hybrid minus baseline) plus a final tally row."""
    base = _seed_dirs(baseline_dir)
    hyb = _seed_dirs(hybrid_dir)
    if set(base) != set(hyb):
        only_b = sorted(set(base) - set(hyb))
        only_h = sorted(set(hyb) - set(base))
        raise UsageError(f"seed sets differ: baseline only {only_b}, hybrid only {only_h}")
    seeds = sorted(base)
    runs = {s: (_load_run(base[s]), _load_run(hyb[s])) for s in seeds}
    checkpoint = checkpoint_frac * statistics.median(_completion(runs[s][0][0]) for s in seeds)
    rows = []
    for s in seeds:
        (bs, bts), (hs, hts) = runs[s]
        nb, nh = blocks_at(bts, checkpoint), blocks_at(hts, checkpoint)
        rows.append({
            "seed": s,
            "d_mean_latency": hs["mean_block_latency"] - bs["mean_block_latency"],
            "d_mean_latency_mobile": hs["mean_block_latency_mobile"] - bs["mean_block_latency_mobile"],
            "d_c_avg": hs["c_avg"] - bs["c_avg"],
            "d_completion_time": _completion(hs) - _completion(bs),
            "checkpoint": checkpoint,
            "blocks_baseline": nb,
            "blocks_hybrid": nh,
            "extra_blocks_pct": 100.0 * (nh - nb) / nb if nb else math.nan,
        })
    # hybrid wins: lower latency and completion, higher throughput and blocks
    rows.append({
        "seed": "tally",
        "d_mean_latency": sum(r["d_mean_latency"] < 0 for r in rows),
        "d_mean_latency_mobile": sum(r["d_mean_latency_mobile"] < 0 for r in rows),
        "d_c_avg": sum(r["d_c_avg"] > 0 for r in rows),
        "d_completion_time": sum(r["d_completion_time"] < 0 for r in rows),
        "checkpoint": checkpoint,
        "blocks_baseline": "",
        "blocks_hybrid": "",
        "extra_blocks_pct": sum(r["blocks_hybrid"] > r["blocks_baseline"] for r in rows),
    })
    return rows


def write_compare(rows: list[dict], path: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[c]) for c in COMPARE_COLUMNS])


def print_summary(rows: list[dict], out=None) -> None:
    out = out or sys.stdout
    per_seed, tally = rows[:-1], rows[-1]
    n = len(per_seed)
    print(f"checkpoint {tally['checkpoint']:.3f} s over {n} seed(s)", file=out)
    print(f"{'seed':>6} {'dLat':>9} {'dLatMob':>9} {'dCavg':>9} {'dDone':>9} {'extra%':>8}", file=out)
    for r in per_seed:
        print(f"{r['seed']:>6} {r['d_mean_latency']:>9.3f} {r['d_mean_latency_mobile']:>9.3f} "
              f"{r['d_c_avg']:>9.3f} {r['d_completion_time']:>9.3f} {r['extra_blocks_pct']:>8.2f}", file=out)
    gains = [r["extra_blocks_pct"] for r in per_seed if not math.isnan(r["extra_blocks_pct"])]
    med = statistics.median(gains) if gains else math.nan
    print(f"hybrid wins: latency {tally['d_mean_latency']}/{n}, mobile latency "
          f"{tally['d_mean_latency_mobile']}/{n}, C_avg {tally['d_c_avg']}/{n}, completion "
          f"{tally['d_completion_time']}/{n}, blocks at checkpoint {tally['extra_blocks_pct']}/{n} "
          f"(median {med:.2f}%)", file=out)


# ---------------------------------------------------------------------- main

def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if getattr(args, "checkpoint_frac", None) is not None:
        cfg = cfg.replace(checkpoint_frac=args.checkpoint_frac)
    return cfg.validate()


def _spec(args, default_modes) -> RunSpec:
    cfg = _config(args)
    if args.mode is None:
        modes = default_modes or [cfg.mode]
    elif args.mode == "both":
        modes = [Mode.BASELINE, Mode.HYBRID]
    else:
        modes = [Mode(args.mode)]
    seeds = parse_seeds(args.seeds) if args.seeds else [cfg.rng_seed]
    jobs = args.jobs if args.jobs is not None else min(len(seeds), os.cpu_count() or 1)
    if jobs < 1:
        raise UsageError(f"--jobs must be >= 1 (got {jobs})")
    return RunSpec(cfg, modes, seeds, args.out, jobs)


def _check_out(out: str) -> None:
    parent = os.path.dirname(os.path.abspath(out))
    if os.path.exists(out) and not os.path.isdir(out):
        raise UsageError(f"--out {out} exists and is not a directory")
    if not os.path.isdir(parent):
        raise UsageError(f"cannot create --out {out}: parent directory does not exist")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobiswarm", description="BitTorrent swarm simulator with mobile peers")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, mode_default_help):
        p.add_argument("--config", help="scenario INI file (defaults apply when omitted)")
        p.add_argument("--mode", choices=["baseline", "hybrid", "both"], help=mode_default_help)
        p.add_argument("--seeds", help="seed list or range, e.g. 0-9 or 1,3,5")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, help="parallel runs (default: seeds, capped at cores)")
        p.add_argument("--checkpoint-frac", type=float, help="checkpoint as a fraction of median baseline completion")

    common(sub.add_parser("run", help="run simulations"), "mode (default: from the config)")
    common(sub.add_parser("sweep", help="run both modes over a seed range and compare"), "mode (default: both)")
    p = sub.add_parser("compare", help="compare baseline and hybrid runs")
    p.add_argument("--out", required=True, help="directory holding baseline/ and hybrid/; compare.csv goes here")
    p.add_argument("--baseline", help="baseline run directory (default: <out>/baseline)")
    p.add_argument("--hybrid", help="hybrid run directory (default: <out>/hybrid)")
    p.add_argument("--config", help="take checkpoint_frac from this scenario file")
    p.add_argument("--checkpoint-frac", type=float, help="overrides the config value")
    return parser


def _compare(args, frac: float) -> int:
    rows = compare_runs(args.baseline or os.path.join(args.out, Mode.BASELINE.value),
                        args.hybrid or os.path.join(args.out, Mode.HYBRID.value), frac)
    write_compare(rows, os.path.join(args.out, "compare.csv"))
    print_summary(rows)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        setup_logging()
        if args.command == "compare":
            return _compare(args, _config(args).checkpoint_frac)
        spec = _spec(args, [Mode.BASELINE, Mode.HYBRID] if args.command == "sweep" else None)
        _check_out(spec.out)
        if args.command == "sweep" and set(spec.modes) != {Mode.BASELINE, Mode.HYBRID}:
            raise UsageError("sweep compares both modes; drop --mode or pass --mode both")
        status = execute(spec)
        if status != EXIT_OK or args.command == "run":
            return status
        return _compare(argparse.Namespace(out=spec.out, baseline=None, hybrid=None), spec.config.checkpoint_frac)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
