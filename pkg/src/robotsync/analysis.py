"""Trace analytics: period offsets, latency, drift fits, histograms and reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pubsub import TraceRecord

OFFSET_BIN_NS = 10_000
LATENCY_BIN_NS = 50_000


class UnsynchronizedError(RuntimeError):
    """Latency requested from a trace whose clocks are not synchronized."""


class WraparoundError(ValueError):
    pass


def period_offset(ts: int, period: int) -> int:
    """Floored modulo: offset of ``ts`` within its period, in [0, period)."""
    if period <= 0:
        raise ValueError("period must be positive")
    return ts % period


def latency(record: TraceRecord, *, synchronized: bool) -> int:
    if not synchronized:
        raise UnsynchronizedError(
            "latency cannot be measured: publisher and subscriber clocks are not synchronized "
            "(enable PTP and wait for lock)")
    if record.t_sub is None:
        raise ValueError(f"{record.topic}#{record.seq} was dropped; no latency")
    return record.t_sub - record.t_pub


@dataclass
class PeriodOffsetSeries:
    topic: str
    period: int
    samples: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        for _, off in self.samples:
            if not 0 <= off < self.period:
                raise ValueError(f"offset {off} outside [0, {self.period})")

    @classmethod
    def from_stamps(cls, topic: str, period: int, stamps) -> "PeriodOffsetSeries":
        return cls(topic, period, [(i, period_offset(int(t), period)) for i, t in enumerate(stamps)])


def unwrap(offsets, period: int) -> np.ndarray:
    """Undo modulo wraparounds so consecutive differences lie in [-period/2, period/2)."""
    v = np.asarray(offsets, dtype=np.int64)
    if len(v) < 2:
        return v.copy()
    d = np.diff(v)
    d = (d + period // 2) % period - period // 2
    return np.concatenate([v[:1], v[0] + np.cumsum(d)])


@dataclass
class DriftFit:
    slope: float      # ns per period index
    intercept: float
    period: int
    ambiguous: bool = False

    @property
    def rate_ppm(self) -> float:
        return self.slope / self.period * 1e6


def drift_fit(series: PeriodOffsetSeries, *, strict: bool = False) -> DriftFit:
    """Least-squares line through the unwrapped offsets.

    A step of half a period cannot be told apart from a wrap; such fits are
    flagged ``ambiguous`` (or rejected with ``strict``).
    """
    if len(series.samples) < 2:
        raise ValueError("drift_fit needs at least two samples")
    idx = np.array([i for i, _ in series.samples], dtype=np.float64)
    raw = np.array([o for _, o in series.samples], dtype=np.int64)
    y = unwrap(raw, series.period)
    # unwrap leaves every step in [-period/2, period/2); a step of exactly half
    # a period could have gone either way
    ambiguous = bool(np.any(2 * np.abs(np.diff(y)) >= series.period))
    if ambiguous and strict:
        raise WraparoundError(f"{series.topic}: wraparound-ambiguous offset series")
    x = idx - idx.mean()
    yc = y.astype(np.float64) - y.mean()
    denom = float(np.dot(x, x))
    if denom == 0:
        raise ValueError("drift_fit needs at least two distinct period indices")
    slope = float(np.dot(x, yc) / denom)
    intercept = float(y.mean() - slope * idx.mean())
    return DriftFit(slope, intercept, series.period, ambiguous)


@dataclass
class Histogram:
    bin_width: int
    bins: dict[int, int] = field(default_factory=dict)
    total: int = 0

    @property
    def support_width(self) -> int:
        """Span covered by non-empty bins, in ns."""
        if not self.bins:
            return 0
        return (max(self.bins) - min(self.bins) + 1) * self.bin_width


def histogram(values, bin_width: int) -> Histogram:
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    v = np.asarray(values, dtype=np.int64)
    if len(v) == 0:
        return Histogram(bin_width)
    keys, counts = np.unique(v // bin_width, return_counts=True)
    return Histogram(bin_width, {int(k): int(c) for k, c in zip(keys, counts)}, int(len(v)))


@dataclass
class SummaryStats:
    count: int
    min: int | None = None
    mean: float | None = None
    max: int | None = None
    stddev: float | None = None
    p50: int | None = None
    p99: int | None = None
    p999: int | None = None


def nearest_rank(sorted_values, q: float) -> int:
    n = len(sorted_values)
    rank = max(1, math.ceil(q * n))
    return int(sorted_values[rank - 1])


def summarize(values) -> SummaryStats:
    if not isinstance(values, (list, tuple, np.ndarray)):
        values = list(values)
    v = np.sort(np.asarray(values, dtype=np.int64))
    if len(v) == 0:
        return SummaryStats(0)
    return SummaryStats(
        count=int(len(v)), min=int(v[0]), mean=round(float(v.mean()), 3), max=int(v[-1]),
        stddev=round(float(v.std()), 3), p50=nearest_rank(v, 0.5), p99=nearest_rank(v, 0.99),
        p999=nearest_rank(v, 0.999))


# ---------------------------------------------------------------------------
# traces


def read_trace(path) -> list[TraceRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(TraceRecord(
                row["topic"], int(row["seq"]), int(row["t_pub_ns"]),
                int(row["t_sub_ns"]) if row["t_sub_ns"] else None, int(row["true_send_ns"]),
                int(row["true_recv_ns"]) if row["true_recv_ns"] else None, row["dropped"] == "1"))
    return out


def write_trace(path, records: list[TraceRecord]) -> None:
    write_csv(path, TraceRecord.CSV_HEADER, (r.csv_row() for r in records))


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def by_topic(records: list[TraceRecord]) -> dict[str, list[TraceRecord]]:
    out: dict[str, list[TraceRecord]] = {}
    for r in records:
        out.setdefault(r.topic, []).append(r)
    for rs in out.values():
        rs.sort(key=lambda r: r.seq)
    return out


def topic_series(records: list[TraceRecord], period: int) -> dict[str, dict[str, PeriodOffsetSeries]]:
    """Per topic, the delta-t_PUB and delta-t_SUB series indexed by seq."""
    out = {}
    for topic, rs in by_topic(records).items():
        pub = PeriodOffsetSeries(topic, period, [(r.seq, period_offset(r.t_pub, period)) for r in rs])
        sub = PeriodOffsetSeries(topic, period, [(r.seq, period_offset(r.t_sub, period))
                                                 for r in rs if r.t_sub is not None])
        out[topic] = {"dt_pub": pub, "dt_sub": sub}
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class RunInfo:
    scenario: str
    seed: int
    duration_s: float
    synchronized: bool
    periods: dict[str, int]
    lock_after_ns: dict[str, int | None] = field(default_factory=dict)
    topology: list = field(default_factory=list)


def build_report(info: RunInfo, records: list[TraceRecord], *, ptp_max_offset=None,
                 ptp_summary=None, network=None, invariant_violation=None) -> tuple[dict, dict]:
    """Returns (report dict, {csv name: (header, rows)})."""
    series_csv: dict[str, tuple] = {}
    topics = {}
    grouped = by_topic(records)
    for topic in sorted(set(grouped) | set(info.periods)):
        rs = grouped.get(topic, [])
        period = info.periods.get(topic)
        entry: dict = {"messages": len(rs), "dropped": sum(r.dropped for r in rs)}
        delivered = [r for r in rs if not r.dropped]
        seqs = [r.seq for r in rs]
        entry["seq_gaps"] = (max(seqs) + 1 - len(set(seqs))) if seqs else 0
        if period:
            entry["period_ns"] = period
            for name, stamps, idx in (("dt_pub", [r.t_pub for r in rs], [r.seq for r in rs]),
                                      ("dt_sub", [r.t_sub for r in delivered], [r.seq for r in delivered])):
                offs = [period_offset(t, period) for t in stamps]
                block = {"stats": asdict(summarize(offs)),
                         "histogram_support_ns": histogram(offs, OFFSET_BIN_NS).support_width}
                if len(offs) >= 2:
                    fit = drift_fit(PeriodOffsetSeries(topic, period, list(zip(idx, offs))))
                    unw = unwrap(offs, period)
                    block["drift_slope_ns_per_period"] = round(fit.slope, 6)
                    block["drift_ambiguous"] = fit.ambiguous
                    block["cumulative_drift_ns"] = int(unw[-1] - unw[0])
                entry[name] = block
                series_csv[series_name(name, topic)] = (("seq", "offset_ns"), list(zip(idx, offs)))
        lat_recs = [r for r in delivered if _after_lock(r, info)]
        if info.synchronized:
            lats = [latency(r, synchronized=True) for r in lat_recs]
            entry["latency"] = {"stats": asdict(summarize(lats)),
                                "histogram": {str(k): v for k, v in
                                              sorted(histogram(lats, LATENCY_BIN_NS).bins.items())},
                                "in_1_2_ms": round(sum(1_000_000 <= x <= 2_000_000 for x in lats) / len(lats), 6)
                                if lats else None}
            series_csv[series_name("latency", topic)] = (("seq", "latency_ns"),
                                                   [(r.seq, l) for r, l in zip(lat_recs, lats)])
        else:
            entry["latency"] = None
        topics[topic] = entry
    report = {
        "scenario": info.scenario,
        "seed": info.seed,
        "duration_s": info.duration_s,
        "clocks_synchronized": info.synchronized,
        "topology": info.topology,
        "topics": topics,
        "ptp": ptp_summary,
        "network": network,
        "invariant_violation": invariant_violation,
    }
    if ptp_max_offset is not None:
        series_csv["ptp_max_offset.csv"] = (("node", "second", "max_abs_true_offset_ns"), ptp_max_offset)
    return report, series_csv


def series_name(kind: str, topic: str) -> str:
    """CSV file name for one series of a topic (topic slashes become underscores)."""
    return f"{kind}__{topic.strip('/').replace('/', '_')}.csv"


def _after_lock(r: TraceRecord, info: RunInfo) -> bool:
    node_lock = info.lock_after_ns.get(r.topic)
    return node_lock is not None and r.true_send >= node_lock


def report_text(report: dict) -> str:
    lines = [f"scenario {report['scenario']}  seed {report['seed']:#x}  duration {report['duration_s']} s",
             f"clocks synchronized: {'yes' if report['clocks_synchronized'] else 'no'}"]
    if report.get("invariant_violation"):
        lines.append(f"INVARIANT VIOLATION: {report['invariant_violation']}")
    for topic, e in report["topics"].items():
        lines.append(f"[{topic}] messages {e['messages']} dropped {e['dropped']} seq gaps {e['seq_gaps']}")
        for name in ("dt_pub", "dt_sub"):
            b = e.get(name)
            if not b:
                continue
            s = b["stats"]
            lines.append(f"  {name}: n={s['count']} min={s['min']} p50={s['p50']} max={s['max']} "
                         f"std={s['stddev']} support={b['histogram_support_ns']} "
                         f"slope={b.get('drift_slope_ns_per_period')} cum={b.get('cumulative_drift_ns')}")
        lat = e.get("latency")
        if lat is None:
            lines.append("  latency: not measurable (clocks unsynchronized)")
        else:
            s = lat["stats"]
            lines.append(f"  latency: n={s['count']} min={s['min']} p50={s['p50']} p99={s['p99']} "
                         f"p99.9={s['p999']} max={s['max']} in[1,2]ms={lat['in_1_2_ms']}")
    ptp = report.get("ptp")
    if ptp:
        for node, p in sorted(ptp.items()):
            lines.append(f"[ptp {node}] lock_at_ns={p['lock_at_ns']} lock_losses={p['lock_losses']} "
                         f"max_offset_after_lock_ns={p['max_offset_after_lock_ns']}")
    net = report.get("network")
    if net:
        for port in net["ports"]:
            lines.append(f"[port {port['port']}] utilization {port['utilization']} "
                         f"gate_violations {port['gate_violations']}")
        lines.append(f"[network] drops {net['drops']}")
    return "\n".join(lines) + "\n"


def write_report(out_dir, report: dict, series_csv: dict) -> None:
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    (out / "report.txt").write_text(report_text(report))
    for name, (header, rows) in sorted(series_csv.items()):
        target = out / name if name.startswith("ptp_") else out / "series" / name
        write_csv(target, header, rows)


# ---------------------------------------------------------------------------
# compare


class BundleMismatch(ValueError):
    pass


def _delta(a, b):
    if a is None or b is None:
        return None
    return round(b - a, 6)


def compare(report_a: dict, report_b: dict) -> dict:
    """Side-by-side statistics of two runs with B - A deltas."""
    if report_a.get("topology") != report_b.get("topology"):
        raise BundleMismatch("bundles come from different topologies")
    ta, tb = set(report_a["topics"]), set(report_b["topics"])
    if ta != tb:
        raise BundleMismatch(f"topic sets differ: only in A {sorted(ta - tb)}, only in B {sorted(tb - ta)}")
    out = {}
    for topic in sorted(ta):
        ea, eb = report_a["topics"][topic], report_b["topics"][topic]
        rows = {}
        for name in ("dt_pub", "dt_sub", "latency"):
            sa = (ea.get(name) or {}).get("stats")
            sb = (eb.get(name) or {}).get("stats")
            if sa is None and sb is None:
                continue
            sa = sa or {}
            sb = sb or {}
            rows[name] = {k: {"a": sa.get(k), "b": sb.get(k), "delta": _delta(sa.get(k), sb.get(k))}
                          for k in ("count", "min", "mean", "max", "stddev", "p50", "p99", "p999")}
            if name != "latency":
                wa = (ea.get(name) or {}).get("histogram_support_ns")
                wb = (eb.get(name) or {}).get("histogram_support_ns")
                rows[name]["histogram_support_ns"] = {"a": wa, "b": wb, "delta": _delta(wa, wb)}
            sda, sdb = sa.get("stddev"), sb.get("stddev")
            if sda and sdb:
                rows[name]["stddev_ratio_a_over_b"] = round(sda / sdb, 6)
        out[topic] = rows
    return {"a": report_a["scenario"], "b": report_b["scenario"], "topics": out}


def compare_text(delta: dict) -> str:
    lines = [f"compare A={delta['a']} B={delta['b']}"]
    for topic, rows in delta["topics"].items():
        lines.append(f"[{topic}]")
        for name, row in rows.items():
            parts = [f"{k} {v['a']} -> {v['b']} ({v['delta']:+})" for k, v in row.items()
                     if isinstance(v, dict) and v["delta"] is not None and k in ("p50", "p99", "stddev")]
            if "stddev_ratio_a_over_b" in row:
                parts.append(f"stddev ratio A/B {row['stddev_ratio_a_over_b']}")
            lines.append(f"  {name}: " + "; ".join(parts))
    return "\n".join(lines) + "\n"
