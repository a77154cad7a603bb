"""Scenario configuration: defaults, INI loading and validation.

Config files are INI-style, one scenario per file::

    [scenario]
    num_peers = 100
    mobile_fraction = 0.5

    [bandwidth]
    mobile_down_kBps = 40
    static_up_kBps = 80..120

Bandwidths are in KiB/s, latencies in milliseconds, durations in seconds.
A distribution is either a point value or a uniform range ``lo..hi``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any

from mobiswarm.errors import ConfigError
from mobiswarm.hybrid import Mode


@dataclass(frozen=True)
class Dist:
    lo: float
    hi: float

    @classmethod
    def parse(cls, text: Any) -> "Dist":
        if isinstance(text, Dist):
            return text
        if isinstance(text, (int, float)):
            return cls(float(text), float(text))
        parts = str(text).split("..")
        if len(parts) == 1:
            v = float(parts[0])
            return cls(v, v)
        if len(parts) == 2:
            return cls(float(parts[0]), float(parts[1]))
        raise ValueError(f"bad distribution {text!r}")

    def draw(self, rng) -> float:
        if self.lo == self.hi:
            return self.lo
        return rng.uniform(self.lo, self.hi)

    def __str__(self) -> str:
        if self.lo == self.hi:
            return _fmt(self.lo)
        return f"{_fmt(self.lo)}..{_fmt(self.hi)}"


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(v)


def _opt(section: str, default: Any) -> Any:
    return field(default=default, metadata={"section": section})


@dataclass(frozen=True)
class ScenarioConfig:
    # [scenario]
    num_peers: int = _opt("scenario", 100)
    num_seeders: int = _opt("scenario", 10)
    mobile_fraction: float = _opt("scenario", 0.5)
    file_size: int = _opt("scenario", 4 * 1024 * 1024)
    piece_size: int = _opt("scenario", 262_144)
    block_size: int = _opt("scenario", 16_384)
    sim_duration: float = _opt("scenario", 3600.0)
    join_spread: float = _opt("scenario", 0.0)
    rng_seed: int = _opt("scenario", 0)
    mode: Mode = _opt("scenario", Mode.HYBRID)
    # [bandwidth]  KiB/s
    mobile_up_kBps: Dist = _opt("bandwidth", Dist(10, 10))
    mobile_down_kBps: Dist = _opt("bandwidth", Dist(40, 40))
    static_up_kBps: Dist = _opt("bandwidth", Dist(100, 100))
    static_down_kBps: Dist = _opt("bandwidth", Dist(500, 500))
    seeder_up_kBps: Dist = _opt("bandwidth", Dist(100, 100))
    seeder_down_kBps: Dist = _opt("bandwidth", Dist(500, 500))
    mobile_down_threshold_kBps: float = _opt("bandwidth", 64.0)
    # [latency]  ms
    mobile_latency_ms: Dist = _opt("latency", Dist(150, 150))
    static_latency_ms: Dist = _opt("latency", Dist(20, 20))
    # [churn]  seconds; mean_online = inf disables churn
    mean_online: float = _opt("churn", 300.0)
    mean_offline: float = _opt("churn", 60.0)
    # [protocol]
    regular_slots: int = _opt("protocol", 4)
    u_default: int = _opt("protocol", 5)
    choke_interval: float = _opt("protocol", 10.0)
    optimistic_interval: float = _opt("protocol", 30.0)
    rate_window: float = _opt("protocol", 20.0)
    pipeline_depth: int = _opt("protocol", 5)
    trial_len: float = _opt("protocol", 120.0)
    warmup_min: float = _opt("protocol", 0.25)
    announce_interval: float = _opt("protocol", 30.0)
    max_neighbors: int = _opt("protocol", 50)
    min_issue_fraction: float = _opt("protocol", 0.5)
    min_stream_kBps: float = _opt("protocol", 0.5)
    rank_by_our: bool = _opt("protocol", False)
    # [hybrid]
    budget_cap: int = _opt("hybrid", 32)
    min_seed_rate_kBps: float = _opt("hybrid", 50.0)
    r_min_mobile_kBps: float = _opt("hybrid", 10.0)
    latency_threshold: float = _opt("hybrid", 2.0)
    drop_hold: float = _opt("hybrid", 30.0)
    mobile_rotation: bool = _opt("hybrid", False)
    # [metrics]
    sample_interval: float = _opt("metrics", 1.0)
    checkpoint_frac: float = _opt("metrics", 0.5)

    def __post_init__(self) -> None:
        # accept "lo..hi" strings and plain numbers for distribution fields
        for f in fields(self):
            if isinstance(f.default, Dist) and not isinstance(getattr(self, f.name), Dist):
                try:
                    object.__setattr__(self, f.name, Dist.parse(getattr(self, f.name)))
                except ValueError as exc:
                    raise ConfigError([f"bad value for {f.name}: {exc}"]) from None

    @property
    def churn_enabled(self) -> bool:
        return math.isfinite(self.mean_online)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def problems(self) -> list[str]:
        out = []

        def need(cond: bool, msg: str) -> None:
            if not cond:
                out.append(msg)

        need(self.num_peers >= 1, f"num_peers must be >= 1 (got {self.num_peers})")
        need(self.num_seeders >= 1, f"num_seeders must be >= 1 (got {self.num_seeders})")
        need(0.0 <= self.mobile_fraction <= 1.0, f"mobile_fraction must be in [0, 1] (got {self.mobile_fraction})")
        for name in ("file_size", "piece_size", "block_size"):
            need(getattr(self, name) > 0, f"{name} must be > 0 (got {getattr(self, name)})")
        if self.block_size > 0 and self.piece_size > 0:
            need(self.piece_size % self.block_size == 0,
                 f"piece_size {self.piece_size} is not a multiple of block_size {self.block_size}")
        for name in ("sim_duration", "mean_online", "mean_offline", "choke_interval",
                     "optimistic_interval", "rate_window", "announce_interval", "sample_interval"):
            need(getattr(self, name) > 0, f"{name} must be > 0 (got {getattr(self, name)})")
        need(self.join_spread >= 0, f"join_spread must be >= 0 (got {self.join_spread})")
        need(self.trial_len >= 0, f"trial_len must be >= 0 (got {self.trial_len})")
        need(0 < self.warmup_min <= 1, f"warmup_min must be in (0, 1] (got {self.warmup_min})")
        need(0 < self.min_issue_fraction <= 1, f"min_issue_fraction must be in (0, 1] (got {self.min_issue_fraction})")
        for name in ("mobile_up_kBps", "mobile_down_kBps", "static_up_kBps", "static_down_kBps",
                     "seeder_up_kBps", "seeder_down_kBps"):
            d = getattr(self, name)
            need(0 < d.lo <= d.hi, f"{name} must be a positive point or range lo..hi with lo <= hi (got {d})")
        for name in ("mobile_latency_ms", "static_latency_ms"):
            d = getattr(self, name)
            need(0 <= d.lo <= d.hi, f"{name} must be >= 0 with lo <= hi (got {d})")
        for name in ("mobile_down_threshold_kBps", "min_stream_kBps", "min_seed_rate_kBps", "r_min_mobile_kBps", "latency_threshold"):
            need(getattr(self, name) > 0, f"{name} must be > 0 (got {getattr(self, name)})")
        need(self.drop_hold >= 0, f"drop_hold must be >= 0 (got {self.drop_hold})")
        for name in ("regular_slots", "u_default", "pipeline_depth", "max_neighbors", "budget_cap"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1 (got {getattr(self, name)})")
        need(self.regular_slots < self.u_default,
             f"regular_slots must leave room for the optimistic slot within u_default "
             f"(got {self.regular_slots} >= {self.u_default})")
        need(0 < self.checkpoint_frac <= 1, f"checkpoint_frac must be in (0, 1] (got {self.checkpoint_frac})")
        return out

    def validate(self) -> "ScenarioConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def to_ini(self) -> str:
        sections: dict[str, list[str]] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Mode):
                text = value.value
            elif isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = "inf" if math.isinf(value) else _fmt(value)
            else:
                text = str(value)
            sections.setdefault(f.metadata["section"], []).append(f"{f.name} = {text}")
        return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}
# configparser lowercases keys, so look them up case-insensitively
_BY_LOWER = {name.lower(): name for name in _FIELDS}


def _coerce(name: str, raw: str) -> Any:
    default = _FIELDS[name].default
    if isinstance(default, Dist):
        return Dist.parse(raw)
    if isinstance(default, Mode):
        return Mode(raw.strip().lower())
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw.replace("_", ""))
    return float(raw)


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    values: dict[str, Any] = {}
    problems = []
    for section in parser.sections():
        for raw_key, raw in parser.items(section):
            key = _BY_LOWER.get(raw_key.lower(), raw_key)
            f = _FIELDS.get(key)
            if f is None:
                problems.append(f"{source}: unknown key [{section}] {key}")
                continue
            if f.metadata["section"] != section:
                problems.append(f"{source}: key {key} belongs in [{f.metadata['section']}], not [{section}]")
                continue
            try:
                values[key] = _coerce(key, raw)
            except ValueError as exc:
                problems.append(f"{source}: bad value for {key}: {exc}")
    if problems:
        raise ConfigError(problems)
    cfg = ScenarioConfig(**values)
    problems = cfg.problems()
    if problems:
        raise ConfigError([f"{source}: {p}" for p in problems])
    return cfg


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {os.fspath(path)}: {exc.strerror}"]) from None
    return parse_config(text, source=os.fspath(path))
