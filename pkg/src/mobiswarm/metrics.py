"""Block-level metrics: per-block latency, throughput, delivery ratio, CSV export."""

from __future__ import annotations

import bisect
import csv
import enum
import math
import os
from dataclasses import dataclass, field
from typing import Optional

from mobiswarm.swarm import PeerClass, PeerId


class Outcome(enum.Enum):
    DELIVERED = "delivered"
    CANCELLED = "cancelled"
    REDUNDANT = "redundant"


@dataclass(slots=True)
class BlockTransferRecord:
    block: tuple
    source: PeerId
    dest: PeerId
    t0: float
    tx: Optional[float]
    outcome: Outcome
    size: int = 0

    def __post_init__(self) -> None:
        if self.outcome is Outcome.DELIVERED:
            if self.tx is None or self.tx < self.t0:
                raise ValueError(f"delivered record needs tx >= t0 (t0={self.t0}, tx={self.tx})")
        elif self.tx is not None:
            raise ValueError("only delivered records carry a delivery time")


@dataclass(slots=True)
class Sample:
    t: float
    cumulative: int
    in_flight: int
    throughput_window: float
    empty_window: bool
    sdr: float
    mobile_served: int
    mobile_served_fraction: float
    mobile_bound: float
    allocated_up_kBps: float
    cumulative_mobile: int = 0
    cumulative_static: int = 0


@dataclass
class MetricsLog:
    mode: str = ""
    seed: int = 0
    dest_class: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    request_times: list = field(default_factory=list)
    # delivery times of DELIVERED records, in append order
    delivered_tx: list = field(default_factory=list)
    completion_time: Optional[float] = None
    end_time: float = 0.0

    @property
    def request_count(self) -> int:
        return len(self.request_times)

    def add_request(self, t0: float) -> None:
        if self.request_times and t0 < self.request_times[-1]:
            raise ValueError("requests must be logged in time order")
        self.request_times.append(t0)

    def add(self, rec: BlockTransferRecord) -> None:
        if rec.outcome is Outcome.DELIVERED:
            if self.delivered_tx and rec.tx < self.delivered_tx[-1]:
                raise ValueError("deliveries must be logged in time order")
            self.delivered_tx.append(rec.tx)
        self.records.append(rec)

    def add_sample(self, sample: Sample) -> None:
        if self.samples and sample.t <= self.samples[-1].t:
            raise ValueError("sample times must be strictly increasing")
        self.samples.append(sample)

    def delivered(self) -> list:
        return [r for r in self.records if r.outcome is Outcome.DELIVERED]


def block_latency(rec: BlockTransferRecord) -> float:
    if rec.outcome is not Outcome.DELIVERED:
        raise ValueError(f"latency is undefined for a {rec.outcome.value} record")
    return rec.tx - rec.t0


def mean_block_latency(log: MetricsLog, peer_class: Optional[PeerClass] = None) -> float:
    lats = [
        r.tx - r.t0
        for r in log.records
        if r.outcome is Outcome.DELIVERED and (peer_class is None or log.dest_class.get(r.dest) is peer_class)
    ]
    return math.fsum(lats) / len(lats) if lats else math.nan


def _count_delivered(log: MetricsLog, start: float, end: float) -> int:
    """Deliveries with start < tx <= end."""
    tx = log.delivered_tx
    return bisect.bisect_right(tx, end) - bisect.bisect_right(tx, start)


def avg_throughput(log: MetricsLog, window_start: float, window_end: float, with_flag: bool = False):
    """Delivered blocks per second over ``(window_start, window_end]``.

    With ``with_flag`` returns ``(rate, empty)`` where ``empty`` marks a
    window that saw no deliveries.
    """
    if window_end <= window_start:
        raise ValueError(f"window_end must exceed window_start ({window_start}, {window_end})")
    n = _count_delivered(log, window_start, window_end)
    rate = n / (window_end - window_start) if n else 0.0
    return (rate, n == 0) if with_flag else rate


def sdr(log: MetricsLog, upto: float = math.inf) -> float:
    """Successful delivery ratio: delivered over requested, both up to ``upto``."""
    requested = bisect.bisect_right(log.request_times, upto)
    if requested == 0:
        return 1.0
    return bisect.bisect_right(log.delivered_tx, upto) / requested


def cumulative_blocks(log: MetricsLog, t: float) -> int:
    return bisect.bisect_right(log.delivered_tx, t)


def upload_capacity_per_request(log: MetricsLog) -> list[tuple[int, float]]:
    series = []
    total = 0
    k = 0
    for r in log.records:
        if r.outcome is Outcome.DELIVERED:
            k += 1
            total += r.size
            series.append((k, total / 1024))
    return series


def c_avg(log: MetricsLog) -> float:
    """Run-average throughput in blocks per second over ``(0, end_time]``."""
    if log.end_time <= 0:
        return 0.0
    return avg_throughput(log, 0.0, log.end_time)


SUMMARY_COLUMNS = (
    "mode", "seed", "completion_time", "mean_block_latency", "mean_block_latency_mobile",
    "mean_block_latency_static", "c_avg", "final_sdr", "peak_mobile_served",
    "delivered_blocks", "requested_blocks", "end_time",
)
TIMESERIES_COLUMNS = (
    "t", "cumulative_blocks", "throughput_window", "sdr", "mobile_served_fraction", "allocated_up_kBps",
)


def _cell(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summary_row(log: MetricsLog) -> dict:
    return {
        "mode": log.mode,
        "seed": log.seed,
        "completion_time": math.nan if log.completion_time is None else log.completion_time,
        "mean_block_latency": mean_block_latency(log),
        "mean_block_latency_mobile": mean_block_latency(log, PeerClass.MOBILE),
        "mean_block_latency_static": mean_block_latency(log, PeerClass.STATIC),
        "c_avg": c_avg(log),
        "final_sdr": sdr(log),
        "peak_mobile_served": max((s.mobile_served for s in log.samples), default=0),
        "delivered_blocks": len(log.delivered_tx),
        "requested_blocks": log.request_count,
        "end_time": float(log.end_time),
    }


def emit_csv(log: MetricsLog, out_path: str | os.PathLike) -> tuple[str, str]:
    """Write ``summary.csv`` and ``timeseries.csv`` into directory ``out_path``."""
    out = os.fspath(out_path)
    summary_path = os.path.join(out, "summary.csv")
    series_path = os.path.join(out, "timeseries.csv")
    try:
        os.makedirs(out, exist_ok=True)
        with open(summary_path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SUMMARY_COLUMNS)
            if log.records or log.samples or log.request_times:
                row = summary_row(log)
                w.writerow([_cell(row[c]) for c in SUMMARY_COLUMNS])
        with open(series_path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TIMESERIES_COLUMNS)
            for s in log.samples:
                w.writerow([
                    _cell(s.t), _cell(s.cumulative), _cell(s.throughput_window), _cell(s.sdr),
                    _cell(s.mobile_served_fraction), _cell(s.allocated_up_kBps),
                ])
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write metrics to {out}: {exc.strerror}") from None
    return summary_path, series_path


_INT_FIELDS = {"seed", "peak_mobile_served", "delivered_blocks", "requested_blocks", "cumulative_blocks"}
_STR_FIELDS = {"mode"}


def _parse(name: str, text: str):
    if name in _STR_FIELDS:
        return text
    if name in _INT_FIELDS:
        return int(text)
    return float(text)


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="ascii") as fh:
        return [{k: _parse(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]
