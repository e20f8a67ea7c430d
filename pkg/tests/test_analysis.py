import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from robotsync.analysis import (
    BundleMismatch, PeriodOffsetSeries, RunInfo, UnsynchronizedError, WraparoundError, build_report, compare,
    drift_fit, histogram, latency, nearest_rank, period_offset, read_trace, series_name, summarize, unwrap,
    write_report, write_trace,
)
from robotsync.pubsub import TraceRecord

P = 100_000_000


def test_period_offset_examples():
    assert period_offset(1_535_967_970_850_000_000, P) == 50_000_000
    assert period_offset(-30_000_000, P) == 70_000_000
    with pytest.raises(ValueError):
        period_offset(5, 0)


@given(st.integers(-10**19, 10**19), st.integers(1, 10**10), st.integers(-1000, 1000))
def test_period_offset_properties(ts, period, k):
    off = period_offset(ts, period)
    assert 0 <= off < period
    assert period_offset(ts + k * period, period) == off
    assert (ts - off) % period == 0


def test_histogram_example():
    h = histogram([0, 5, 10], 10)
    assert h.bins == {0: 2, 1: 1}
    assert h.total == 3
    assert h.support_width == 20
    assert histogram([], 10).support_width == 0
    assert histogram([-1], 10).bins == {-1: 1}


def test_unwrap_undoes_wraps():
    assert unwrap([90, 95, 0, 5, 10], 100).tolist() == [90, 95, 100, 105, 110]
    assert unwrap([10, 2, 97], 100).tolist() == [10, 2, -3]


@given(st.integers(0, P - 1), st.integers(-P // 4, P // 4), st.integers(2, 200))
def test_drift_fit_recovers_linear_drift(start, slope, n):
    true = [start + slope * i for i in range(n)]
    s = PeriodOffsetSeries("/t", P, [(i, period_offset(v, P)) for i, v in enumerate(true)])
    fit = drift_fit(s)
    assert fit.slope == pytest.approx(slope, abs=1e-9 * P)
    assert not fit.ambiguous


def test_drift_fit_rate_and_ambiguity():
    s = PeriodOffsetSeries("/t", P, [(i, (i * 1000) % P) for i in range(10)])
    assert drift_fit(s).rate_ppm == pytest.approx(10.0)
    half = PeriodOffsetSeries("/t", P, [(0, 0), (1, P // 2)])
    assert drift_fit(half).ambiguous
    with pytest.raises(WraparoundError):
        drift_fit(half, strict=True)
    with pytest.raises(ValueError):
        drift_fit(PeriodOffsetSeries("/t", P, [(0, 1)]))
    with pytest.raises(ValueError):
        PeriodOffsetSeries("/t", P, [(0, P)])


def test_nearest_rank_and_summary():
    v = list(range(1, 101))
    assert nearest_rank(v, 0.5) == 50
    assert nearest_rank(v, 0.99) == 99
    assert nearest_rank(v, 0.999) == 100
    s = summarize(reversed(v))
    assert (s.min, s.p50, s.p99, s.p999, s.max) == (1, 50, 99, 100, 100)
    assert s.mean == 50.5
    assert summarize([]).count == 0


@given(st.lists(st.integers(-10**12, 10**12), min_size=1, max_size=300))
def test_summary_ordering(values):
    s = summarize(values)
    assert s.min <= s.p50 <= s.p99 <= s.p999 <= s.max
    assert s.min <= s.mean <= s.max


def _rec(seq, t_pub, lat=1_500_000, topic="/a", dropped=False):
    return TraceRecord(topic, seq, t_pub, None if dropped else t_pub + lat, t_pub,
                       None if dropped else t_pub + lat, dropped)


def test_latency_refused_without_sync():
    r = _rec(0, 0)
    with pytest.raises(UnsynchronizedError):
        latency(r, synchronized=False)
    assert latency(r, synchronized=True) == 1_500_000
    with pytest.raises(ValueError):
        latency(_rec(0, 0, dropped=True), synchronized=True)


def _info(sync=True, topology=("x",)):
    return RunInfo("t", 1, 1.0, sync, {"/a": P}, {"/a": 0 if sync else None}, list(topology))


def test_report_on_synthetic_trace():
    recs = [_rec(i, i * P + 10) for i in range(50)] + [_rec(50, 50 * P + 10, dropped=True)]
    rep, series = build_report(_info(), recs)
    a = rep["topics"]["/a"]
    assert a["messages"] == 51 and a["dropped"] == 1 and a["seq_gaps"] == 0
    assert a["dt_pub"]["stats"]["max"] == 10
    assert a["dt_sub"]["stats"]["min"] == 1_500_010
    assert a["latency"]["in_1_2_ms"] == 1.0
    assert a["latency"]["stats"]["count"] == 50
    assert series_name("latency", "/a") in series
    unsync, _ = build_report(_info(sync=False), recs)
    assert unsync["topics"]["/a"]["latency"] is None


def test_report_with_no_records():
    rep, _ = build_report(_info(), [])
    assert rep["topics"]["/a"]["messages"] == 0
    assert rep["topics"]["/a"]["dt_pub"]["stats"]["count"] == 0


def test_series_name_flattens_topic():
    assert series_name("dt_pub", "/motor1/state") == "dt_pub__motor1_state.csv"


def test_trace_roundtrip(tmp_path):
    recs = [_rec(0, 5), _rec(1, 7, dropped=True)]
    write_trace(tmp_path / "t.csv", recs)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == \
        "topic,seq,t_pub_ns,t_sub_ns,true_send_ns,true_recv_ns,dropped"
    assert read_trace(tmp_path / "t.csv") == recs


def test_write_report_files(tmp_path):
    recs = [_rec(i, i * P) for i in range(5)]
    rep, series = build_report(_info(), recs)
    write_report(tmp_path, rep, series)
    assert json.loads((tmp_path / "report.json").read_text()) == rep
    assert (tmp_path / "report.txt").read_text()
    for name in series:
        lines = (tmp_path / "series" / name).read_text().splitlines()
        assert lines[0].count(",") >= 1 and len(lines) == 6


def test_compare_self_is_zero_and_mismatch_rejected():
    rng = np.random.default_rng(0)
    recs = [_rec(i, i * P + int(rng.integers(0, 1000))) for i in range(100)]
    rep, _ = build_report(_info(), recs)
    d = compare(rep, rep)
    for rows in d["topics"]["/a"].values():
        for k, v in rows.items():
            if isinstance(v, dict):
                assert v["delta"] in (0, 0.0, None)
    assert d["topics"]["/a"]["dt_pub"]["stddev_ratio_a_over_b"] == 1.0
    other, _ = build_report(_info(topology=("y",)), recs)
    with pytest.raises(BundleMismatch):
        compare(rep, other)
    rep2 = json.loads(json.dumps(rep))
    rep2["topics"]["/b"] = rep2["topics"]["/a"]
    with pytest.raises(BundleMismatch):
        compare(rep, rep2)
