"""Build a simulation from a Scenario, run it, and write the artifact bundle."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis
from .clocks import SECOND, DisciplinedClock, OscillatorModel, TimestampModel
from .engine import Engine, InvariantViolation, RngFactory, parse_distribution
from .netsim import GateControlList, GateEntry, Network, TrafficGenerator, daisy_chain
from .ptp import PtpConfig, PtpMaster, PtpPort, PtpSlave, ServoState, max_offset_series
from .pubsub import Publisher, PublisherTask, StackModel, Subscriber, TraceRecord
from .scenario import Scenario

log = logging.getLogger(__name__)


@dataclass
class SimResult:
    scenario: Scenario
    records: list[TraceRecord]
    clocks: dict[str, DisciplinedClock]
    publishers: dict[str, Publisher]
    slaves: dict[str, PtpSlave] = field(default_factory=dict)
    network: dict | None = None
    frames: list | None = None
    violation: str | None = None
    topology: list = field(default_factory=list)
    event_log: list | None = None

    @property
    def exit_status(self) -> int:
        return 1 if self.violation else 0

    def lock_times(self) -> dict[str, int | None]:
        """True (epoch-based) lock instant of each PTP slave."""
        ep = self.scenario.epoch
        return {n: (None if s.lock_time is None else ep + s.lock_time) for n, s in self.slaves.items()}


def _draw(spec, stream) -> float:
    return stream.draw(parse_distribution(spec))


def build_clocks(sc: Scenario, rng: RngFactory) -> dict[str, DisciplinedClock]:
    clocks = {}
    for node in sc.topology.chain:
        over = sc.clocks.nodes.get(node)
        s = rng.stream(f"clock/{node}")
        # always draw both values so per-node overrides leave other nodes untouched
        offset = _draw(sc.clocks.initial_offset_ns, s)
        drift = _draw(sc.clocks.drift_ppm, s)
        wander = sc.clocks.wander_sigma_ppm
        jitter = sc.clocks.jitter_sigma_ns
        if over is not None:
            if over.initial_offset_ns is not None:
                offset = _draw(over.initial_offset_ns, s)
            if over.drift_ppm is not None:
                drift = _draw(over.drift_ppm, s)
            if over.wander_sigma_ppm is not None:
                wander = over.wander_sigma_ppm
            if over.jitter_sigma_ns is not None:
                jitter = over.jitter_sigma_ns
        osc = OscillatorModel(round(offset), drift, wander, jitter)
        clocks[node] = DisciplinedClock(osc, epoch=sc.epoch, name=node,
                                        wander_stream=rng.stream(f"wander/{node}") if wander else None)
    return clocks


def simulate(sc: Scenario, *, record_log: bool = False) -> SimResult:
    end = round(sc.duration * SECOND)
    engine = Engine(seed=sc.seed, record_log=record_log)
    rng = engine.rng
    topo = daisy_chain(sc.topology.chain, sc.topology.rate_bps, sc.topology.propagation_ns,
                       tuple(sc.topology.bridges))
    net = Network(engine, topo, queue_capacity=sc.topology.queue_capacity,
                  bridge_delay_ns=sc.topology.bridge_delay_ns, end_time=end, frame_log=sc.frame_log)
    clocks = build_clocks(sc, rng)
    endpoints = [n for n in sc.topology.chain if n not in sc.topology.bridges]
    sub_node = sc.topology.subscriber

    stack = StackModel(parse_distribution(sc.stack.publish_latency),
                       parse_distribution(sc.stack.subscribe_latency),
                       parse_distribution(sc.stack.stamp_jitter))
    subscriber = Subscriber(engine, sub_node, clocks[sub_node], stack, rng, epoch=sc.epoch)

    handlers: dict[str, dict] = {n: {} for n in endpoints}
    handlers[sub_node]["topic"] = subscriber.deliver

    slaves: dict[str, PtpSlave] = {}
    master = None
    if sc.ptp.enabled:
        p = sc.ptp
        tsm = TimestampModel(p.timestamp.kind, parse_distribution(p.timestamp.noise))
        cfg = PtpConfig(p.frame_size, sc.priority.ptp, p.delay_window, p.outlier_factor, p.delay_filter,
                        p.lock_min_delay_samples)
        others = [n for n in endpoints if n != p.master]
        master = PtpMaster(engine, net, p.master, clocks[p.master], others,
                           PtpPort("master", ",".join(others), p.sync_interval_ns, p.delay_req_interval_ns, tsm),
                           cfg, rng.stream(f"ptp/{p.master}"))
        handlers[p.master]["ptp"] = master.receive
        for n in others:
            servo = ServoState(p.kp, p.ki, p.sync_interval_ns, p.step_threshold_ns, p.lock_threshold_ns,
                               p.lock_samples)
            slaves[n] = PtpSlave(engine, net, n, clocks[n], p.master, clocks[p.master],
                                 PtpPort("slave", p.master, p.sync_interval_ns, p.delay_req_interval_ns, tsm),
                                 servo, cfg, rng.stream(f"ptp/{n}"))
            handlers[n]["ptp"] = slaves[n].receive

    for node, table in handlers.items():
        net.attach(node, _dispatcher(table))

    for t in sc.traffic:
        gen = TrafficGenerator(t.load, t.frame_size, t.pattern, sc.priority.background, t.start_ns)
        net.port(t.node, t.toward).attach_generator(gen, rng.stream(f"traffic/{t.node}->{t.toward}"))
    for q in sc.qbv:
        gcl = GateControlList(q.cycle_ns, [GateEntry(e.start_ns, e.duration_ns, frozenset(e.open_classes))
                                           for e in q.entries], q.base_time_ns)
        net.port(q.node, q.toward).attach_gate(gcl, clocks[q.node] if q.clock == "local" else None)

    publishers = {}
    for ps in sc.publishers:
        task = PublisherTask(ps.topic, ps.node, ps.period_ns, ps.timer_mode, parse_distribution(ps.exec_time),
                             ps.message_size, sc.priority.topic if ps.pcp is None else ps.pcp)
        publishers[ps.topic] = Publisher(engine, net, task, clocks[ps.node], stack, rng,
                                         dst=sub_node, epoch=sc.epoch)

    if master is not None:
        master.start(0)
        for s in slaves.values():
            s.start(0, sc.ptp.delay_req_phase_ns)
    for pub in publishers.values():
        pub.start()

    violation = None
    netstats = None
    try:
        engine.run_until(end)
        netstats = net.finalize(end)
    except InvariantViolation as exc:
        violation = f"{exc.name}: {exc}"
        log.error("invariant violated: %s", violation)

    records = list(subscriber.records)
    for pub in publishers.values():
        for msg in pub.dropped:
            records.append(TraceRecord(msg.topic, msg.seq, msg.header_stamp, None, msg.true_send, None, True))
    records.sort(key=lambda r: (r.topic, r.seq))
    return SimResult(sc, records, clocks, publishers, slaves, netstats, net.frame_log, violation,
                     topo.signature(), engine.log)


def _dispatcher(table: dict):
    def handle(frame, now):
        h = table.get(frame.kind)
        if h is not None:
            h(frame, now)
    return handle


# ---------------------------------------------------------------------------
# bundle


def ptp_summary(res: SimResult) -> dict | None:
    if not res.slaves:
        return None
    out = {}
    for n, s in res.slaves.items():
        after = [abs(r.true_offset) for r in s.records if s.lock_time is not None and r.at >= s.lock_time]
        out[n] = {"lock_at_ns": s.lock_time, "lock_losses": s.servo.lock_losses, "steps": s.servo.steps,
                  "path_delay_ns": s.delay_estimate, "delay_outliers": s.rejected,
                  "max_offset_after_lock_ns": max(after) if after else None}
    return out


def max_offset_rows(res: SimResult) -> list[tuple]:
    rows = []
    for n, s in sorted(res.slaves.items()):
        rows.extend((n, sec, v) for sec, v in max_offset_series(s.records))
    return rows


def make_report(res: SimResult) -> tuple[dict, dict]:
    sc = res.scenario
    locks = res.lock_times()
    info = analysis.RunInfo(
        scenario=sc.name, seed=sc.seed, duration_s=sc.duration, synchronized=sc.ptp.enabled,
        periods={p.topic: p.period_ns for p in sc.publishers},
        lock_after_ns={p.topic: (locks.get(p.node) if sc.ptp.enabled else None) for p in sc.publishers},
        topology=res.topology)
    return analysis.build_report(info, res.records, ptp_max_offset=max_offset_rows(res) if res.slaves else None,
                                 ptp_summary=ptp_summary(res), network=res.network,
                                 invariant_violation=res.violation)


def write_bundle(res: SimResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report, series = make_report(res)
    analysis.write_trace(out / "trace.csv", res.records)
    if res.slaves:
        rows = [(n, r.at, r.estimated_offset, r.true_offset, r.path_delay)
                for n, s in sorted(res.slaves.items()) for r in s.records]
        analysis.write_csv(out / "ptp_offsets.csv",
                           ("node", "t_ns", "estimated_offset_ns", "true_offset_ns", "path_delay_ns"), rows)
    if res.frames is not None:
        analysis.write_csv(out / "frames.csv", FRAME_HEADER, frame_rows(res.frames))
    (out / "scenario.json").write_text(_json(res.scenario.expanded()))
    analysis.write_report(out, report, series)
    return report


FRAME_HEADER = ("frame_id", "kind", "pcp", "src", "dst", "hop", "node", "enqueue_ns", "dequeue_ns",
                "deliver_ns")


def frame_rows(frames) -> list[tuple]:
    rows = []
    for f in sorted(frames, key=lambda f: f.id):
        for i, h in enumerate(f.hops):
            rows.append((f.id, f.kind, f.pcp, f.src, f.dst, i, h.node, h.enqueued_at,
                         "" if h.dequeued_at < 0 else h.dequeued_at,
                         "" if h.delivered_at < 0 else h.delivered_at))
    return rows


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def run(sc: Scenario, out_dir) -> int:
    res = simulate(sc)
    write_bundle(res, out_dir)
    return res.exit_status
