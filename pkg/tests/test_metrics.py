import math

import pytest
from hypothesis import given, strategies as st

from mobiswarm.metrics import (
    SUMMARY_COLUMNS, TIMESERIES_COLUMNS, BlockTransferRecord, MetricsLog, Outcome, avg_throughput,
    block_latency, c_avg, cumulative_blocks, emit_csv, mean_block_latency, read_csv, sdr, summary_row,
    upload_capacity_per_request,
)
from mobiswarm.swarm import PeerClass

from conftest import finished_run, small_config


def delivered(t0, tx, size=16_384, dest=1):
    return BlockTransferRecord((0, 0), 0, dest, t0, tx, Outcome.DELIVERED, size)


def log_of(records, requests=None):
    log = MetricsLog()
    for t in sorted(requests if requests is not None else [r.t0 for r in records]):
        log.add_request(t)
    for r in sorted(records, key=lambda r: (r.tx is None, r.tx or 0)):
        log.add(r)
    return log


def test_block_latency_examples():
    assert block_latency(delivered(2.0, 2.5)) == 0.5
    assert block_latency(delivered(3.0, 3.0)) == 0.0
    assert mean_block_latency(log_of([delivered(0.0, 0.5), delivered(1.0, 2.5)])) == 1.0


def test_latency_undefined_for_undelivered():
    rec = BlockTransferRecord((0, 0), 0, 1, 1.0, None, Outcome.CANCELLED)
    with pytest.raises(ValueError):
        block_latency(rec)
    assert math.isnan(mean_block_latency(log_of([rec])))
    with pytest.raises(ValueError):
        BlockTransferRecord((0, 0), 0, 1, 2.0, 1.0, Outcome.DELIVERED)


def test_latency_by_class():
    log = log_of([delivered(0.0, 1.0, dest=1), delivered(0.0, 3.0, dest=2)])
    log.dest_class = {1: PeerClass.MOBILE, 2: PeerClass.STATIC}
    assert mean_block_latency(log, PeerClass.MOBILE) == 1.0
    assert mean_block_latency(log, PeerClass.STATIC) == 3.0


def test_throughput_examples():
    log = log_of([delivered(0.0, 0.1 + i * 0.45) for i in range(100)])
    assert avg_throughput(log, 0.0, 50.0) == 2.0
    assert avg_throughput(log_of([]), 0.0, 50.0, with_flag=True) == (0.0, True)
    with pytest.raises(ValueError):
        avg_throughput(log, 5.0, 5.0)


@given(st.lists(st.floats(0.001, 100.0), max_size=60), st.floats(0.01, 99.99))
def test_throughput_windows_partition(txs, cut):
    log = log_of([delivered(0.0, t) for t in txs])

    def count(a, b):
        return round(avg_throughput(log, a, b) * (b - a))

    assert count(0.0, cut) + count(cut, 100.0) == count(0.0, 100.0)


@given(st.lists(st.floats(0.001, 100.0), max_size=60), st.floats(0.001, 200.0))
def test_throughput_times_window_is_cumulative(txs, T):
    log = log_of([delivered(0.0, t) for t in txs])
    assert round(avg_throughput(log, 0.0, T) * T) == cumulative_blocks(log, T)


def test_sdr_examples():
    recs = [delivered(0.0, 1.0) for _ in range(90)]
    assert sdr(log_of(recs, [0.0] * 100)) == 0.9
    assert sdr(MetricsLog()) == 1.0
    assert sdr(log_of(recs, [0.0] * 100), upto=0.5) == 0.0


@given(st.lists(st.tuples(st.floats(0, 50), st.floats(0, 50), st.booleans()), max_size=40))
def test_sdr_bounded(items):
    recs = [delivered(t0, t0 + dt) if ok else BlockTransferRecord((0, 0), 0, 1, t0, None, Outcome.CANCELLED)
            for t0, dt, ok in items]
    log = log_of(recs)
    assert 0.0 <= sdr(log) <= 1.0


@given(st.lists(st.floats(0.0, 100.0), max_size=60), st.floats(0, 100), st.floats(0, 100))
def test_cumulative_monotone(txs, t1, t2):
    log = log_of([delivered(0.0, t) for t in txs])
    assert cumulative_blocks(log, 0.0) == sum(t == 0.0 for t in txs)
    lo, hi = sorted((t1, t2))
    assert cumulative_blocks(log, lo) <= cumulative_blocks(log, hi)


def test_upload_capacity_examples():
    assert upload_capacity_per_request(log_of([delivered(0.0, 1.0)])) == [(1, 16.0)]


@given(st.lists(st.integers(1, 16_384), max_size=50))
def test_upload_capacity_series(sizes):
    log = log_of([delivered(0.0, 1.0 + i, size=s) for i, s in enumerate(sizes)])
    series = upload_capacity_per_request(log)
    assert [k for k, _ in series] == list(range(1, len(sizes) + 1))
    kb = [v for _, v in series]
    assert kb == sorted(kb)
    if sizes:
        assert kb[-1] == sum(sizes) / 1024


def test_csv_empty_log_is_headers_only(tmp_path):
    s, t = emit_csv(MetricsLog(), tmp_path)
    assert open(s).read() == ",".join(SUMMARY_COLUMNS) + "\n"
    assert open(t).read() == ",".join(TIMESERIES_COLUMNS) + "\n"


def test_csv_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit_csv(MetricsLog(), blocker / "sub")


def test_csv_reemit_identical_and_row_count(tmp_path, small_run):
    m = small_run.metrics
    a = emit_csv(m, tmp_path / "a")
    b = emit_csv(m, tmp_path / "b")
    for pa, pb in zip(a, b):
        assert open(pa, "rb").read() == open(pb, "rb").read()
    cfg = small_run.cfg
    rows = read_csv(a[1])
    assert len(rows) == round(cfg.sim_duration / cfg.sample_interval) + 1
    assert [r["t"] for r in rows] == [i * cfg.sample_interval for i in range(len(rows))]


def test_default_run_has_3601_rows(tmp_path):
    from mobiswarm import ScenarioConfig
    sim = finished_run(ScenarioConfig(rng_seed=0))
    _, series = emit_csv(sim.metrics, tmp_path)
    assert len(read_csv(series)) == 3601


def test_csv_round_trip(tmp_path, small_run):
    m = small_run.metrics
    summary, series = emit_csv(m, tmp_path)
    got = read_csv(summary)[0]
    want = summary_row(m)
    for k, v in want.items():
        if isinstance(v, float):
            assert got[k] == v or (math.isnan(got[k]) and math.isnan(v))
        else:
            assert got[k] == v
    for row, s in zip(read_csv(series), m.samples):
        assert row["cumulative_blocks"] == s.cumulative
        assert row["sdr"] == s.sdr
        assert row["throughput_window"] == s.throughput_window


def test_run_level_metric_identities(small_run):
    m = small_run.metrics
    end = m.end_time
    assert round(avg_throughput(m, 0.0, end) * end) == cumulative_blocks(m, end)
    assert c_avg(m) == avg_throughput(m, 0.0, end)
    held = sum(small_run.peers[d].bitfield.num_blocks_held for d in small_run.leechers)
    assert cumulative_blocks(m, end) == held
    for r in m.delivered():
        base = small_run.latency_ms[(min(r.source, r.dest), max(r.source, r.dest))] / 1000
        assert block_latency(r) >= base - 1e-12


def test_churn_free_sdr_is_one():
    sim = finished_run(small_config(mean_online=math.inf))
    assert sdr(sim.metrics) == 1.0
    assert sim.metrics.samples[-1].sdr == 1.0
