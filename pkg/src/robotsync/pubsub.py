"""ROS-2-style periodic publishers and the controller-side subscriber."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .clocks import DisciplinedClock, LocalTimer, TimestampModel, stamp
from .engine import Constant, Distribution, Engine, Event, LogNormal, RngFactory
from .netsim.network import MAX_PAYLOAD, Frame, Network

log = logging.getLogger(__name__)

MS = 1_000_000
US = 1_000


def default_publish_latency() -> LogNormal:
    return LogNormal.from_median(150 * US, 400 * US)


def default_subscribe_latency() -> LogNormal:
    return LogNormal.from_median(1100 * US, 1600 * US)


def default_stamp_jitter() -> LogNormal:
    return LogNormal.from_median(15 * US, 60 * US)


@dataclass
class PublisherTask:
    topic: str
    node: str
    period: int = 100 * MS
    timer_mode: str = "absolute"
    exec_time: Distribution = field(default_factory=lambda: Constant(1 * MS))
    message_size: int = 256
    pcp: int = 0

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.timer_mode not in ("relative", "absolute"):
            raise ValueError(f"timer_mode must be relative or absolute, not {self.timer_mode!r}")
        if self.message_size > MAX_PAYLOAD:
            raise ValueError(f"message of {self.message_size} B needs fragmentation (max {MAX_PAYLOAD} B)")


@dataclass
class Message:
    topic: str
    seq: int
    header_stamp: int
    size: int
    true_send: int


@dataclass
class StackModel:
    publish_latency: Distribution = field(default_factory=default_publish_latency)
    subscribe_latency: Distribution = field(default_factory=default_subscribe_latency)
    stamp_jitter: Distribution = field(default_factory=default_stamp_jitter)


@dataclass
class TraceRecord:
    topic: str
    seq: int
    t_pub: int
    t_sub: int | None
    true_send: int
    true_recv: int | None
    dropped: bool = False

    CSV_HEADER = ("topic", "seq", "t_pub_ns", "t_sub_ns", "true_send_ns", "true_recv_ns", "dropped")

    def csv_row(self) -> list:
        return [self.topic, self.seq, self.t_pub, "" if self.t_sub is None else self.t_sub,
                self.true_send, "" if self.true_recv is None else self.true_recv, int(self.dropped)]


def next_fire(task: PublisherTask, finished_at: int) -> int:
    """Next wake-up on the node's local clock after a cycle that finished at ``finished_at``."""
    if task.timer_mode == "relative":
        return finished_at + task.period
    return (finished_at // task.period + 1) * task.period


class Publisher:
    def __init__(self, engine: Engine, net: Network, task: PublisherTask, clock: DisciplinedClock,
                 stack: StackModel, rng: RngFactory, *, dst: str, epoch: int):
        self.engine, self.net, self.task, self.clock, self.stack = engine, net, task, clock, stack
        self.dst = dst
        self.epoch = epoch
        self._stamp_model = TimestampModel("software", stack.stamp_jitter)
        self._exec = rng.stream(f"{task.node}/{task.topic}/exec")
        self._pub_lat = rng.stream(f"{task.node}/{task.topic}/publish-latency")
        self._stamps = rng.stream(f"{task.node}/{task.topic}/stamp")
        self.seq = 0
        self.timer = LocalTimer(engine, clock, self._fire, "timer")
        self.overruns = 0
        self.published: dict[int, Message] = {}
        self.dropped: list[Message] = []

    def start(self) -> None:
        now = self.engine.now
        local = self.clock.local_now(now)
        first = local + self.task.period if self.task.timer_mode == "relative" else next_fire(self.task, local)
        self.timer.arm(first, now)

    def _fire(self, now: int) -> None:
        exec_ns = max(0, round(self._exec.draw(self.task.exec_time)))
        self.engine.schedule(now + exec_ns, self._publish, "publish")

    def _publish(self, ev: Event) -> None:
        now = ev.fire_at
        t_pub = stamp(self._stamp_model, self.clock, now, self._stamps)
        msg = Message(self.task.topic, self.seq, t_pub, self.task.message_size, self.epoch + now)
        self.published[self.seq] = msg
        self.seq += 1
        finished = self.clock.local_now(now)
        nxt = next_fire(self.task, finished)
        deadline = self.timer.target
        if self.task.timer_mode == "absolute" and deadline is not None and nxt > deadline + self.task.period:
            self.overruns += 1
            log.info("%s overran its period at seq %d", self.task.topic, msg.seq)
        self.timer.arm(nxt, now)
        lat = max(0, round(self._pub_lat.draw(self.stack.publish_latency)))
        self.engine.schedule(now + lat, self._to_nic, "nic", msg)

    def _to_nic(self, ev: Event) -> None:
        msg = ev.payload
        frame = Frame.for_payload(msg.size, src=self.task.node, dst=self.dst, pcp=self.task.pcp,
                                  kind="topic", payload=msg)
        frame.on_drop = self._on_drop
        self.net.send(frame)

    def _on_drop(self, frame: Frame, node: str) -> None:
        self.dropped.append(frame.payload)


def publish(pub: Publisher) -> None:
    """Fire one publish cycle immediately (normally driven by the timer)."""
    pub._publish(Event(pub.engine.now, pub._publish, "publish", -1))


class Subscriber:
    """Controller-side callbacks: one TraceRecord per delivered message."""

    def __init__(self, engine: Engine, node: str, clock: DisciplinedClock, stack: StackModel,
                 rng: RngFactory, *, epoch: int):
        self.engine, self.node, self.clock, self.stack = engine, node, clock, stack
        self.epoch = epoch
        self.rng = rng
        self._stamp_model = TimestampModel("software", stack.stamp_jitter)
        self.records: list[TraceRecord] = []

    def deliver(self, frame: Frame, now: int) -> None:
        msg = frame.payload
        lat = self.rng.stream(f"{self.node}/{msg.topic}/subscribe-latency")
        delay = max(0, round(lat.draw(self.stack.subscribe_latency)))
        self.engine.schedule(now + delay, self._callback, "callback", msg)

    def _callback(self, ev: Event) -> None:
        msg = ev.payload
        s = self.rng.stream(f"{self.node}/{msg.topic}/stamp")
        t_sub = stamp(self._stamp_model, self.clock, ev.fire_at, s)
        self.records.append(TraceRecord(msg.topic, msg.seq, msg.header_stamp, t_sub, msg.true_send,
                                        self.epoch + ev.fire_at))


def deliver(sub: Subscriber, frame: Frame, now: int) -> None:
    sub.deliver(frame, now)
