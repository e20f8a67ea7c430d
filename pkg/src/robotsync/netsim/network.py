from __future__ import annotations

import itertools
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable

from ..clocks import DisciplinedClock
from ..engine import Engine, Event, InvariantViolation, RngStream
from . import PortCore
from .gates import GateControlList
from .traffic import L2_OVERHEAD, ArrivalSource, TrafficGenerator

MIN_FRAME = 64
MAX_FRAME = 1518
MAX_PAYLOAD = MAX_FRAME - L2_OVERHEAD
KINDS = ("ptp", "topic", "background")
# keep at least this much background arrival data ahead of the port's clock
LOOKAHEAD_NS = 50_000_000


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    rate_bps: int
    propagation_ns: int


@dataclass
class Topology:
    nodes: dict[str, str]  # id -> "endpoint" | "bridge"
    links: list[Link]

    def __post_init__(self):
        self._adj: dict[str, dict[str, Link]] = defaultdict(dict)
        for link in self.links:
            for n in (link.a, link.b):
                if n not in self.nodes:
                    raise ValueError(f"link references unknown node {n!r}")
            self._adj[link.a][link.b] = link
            self._adj[link.b][link.a] = link
        self._next: dict[tuple[str, str], str] = {}
        for src in self.nodes:
            self._bfs(src)
        for dst in self.nodes:
            if dst != next(iter(self.nodes)) and (next(iter(self.nodes)), dst) not in self._next:
                raise ValueError(f"topology is not connected: {dst!r} unreachable")

    def _bfs(self, src: str) -> None:
        first_hop: dict[str, str] = {}
        seen = {src}
        frontier = deque()
        for nb in sorted(self._adj[src]):
            first_hop[nb] = nb
            seen.add(nb)
            frontier.append(nb)
        while frontier:
            n = frontier.popleft()
            for nb in sorted(self._adj[n]):
                if nb not in seen:
                    seen.add(nb)
                    first_hop[nb] = first_hop[n]
                    frontier.append(nb)
        for dst, hop in first_hop.items():
            self._next[(src, dst)] = hop

    def next_hop(self, node: str, dst: str) -> str:
        return self._next[(node, dst)]

    def link(self, a: str, b: str) -> Link:
        return self._adj[a][b]

    def route(self, src: str, dst: str) -> list[str]:
        path = [src]
        while path[-1] != dst:
            path.append(self.next_hop(path[-1], dst))
        return path

    def signature(self) -> list:
        return [sorted(self.nodes.items()),
                [[l.a, l.b, l.rate_bps, l.propagation_ns] for l in self.links]]


def daisy_chain(chain: list[str], rate_bps: int, propagation_ns: int,
                bridges: tuple[str, ...] = ()) -> Topology:
    """Linear topology; names in ``bridges`` are pure bridges, the rest endpoints."""
    nodes = {n: ("bridge" if n in bridges else "endpoint") for n in chain}
    links = [Link(a, b, rate_bps, propagation_ns) for a, b in zip(chain, chain[1:])]
    return Topology(nodes, links)


@dataclass
class Hop:
    node: str
    enqueued_at: int
    dequeued_at: int = -1
    tx_end: int = -1
    delivered_at: int = -1


@dataclass(eq=False)
class Frame:
    src: str
    dst: str
    size: int  # on-wire bytes incl. L2 header/FCS, excl. preamble/IPG
    pcp: int
    kind: str
    payload: Any = None
    id: int = -1
    hops: list[Hop] = field(default_factory=list)
    on_tx_start: Callable[["Frame", int], None] | None = None
    on_drop: Callable[["Frame", str], None] | None = None

    def __post_init__(self):
        if not MIN_FRAME <= self.size <= MAX_FRAME:
            raise ValueError(f"frame size {self.size} outside [{MIN_FRAME}, {MAX_FRAME}]")
        if not 0 <= self.pcp <= 7:
            raise ValueError("pcp must be 0-7")
        if self.kind not in KINDS:
            raise ValueError(f"unknown frame kind {self.kind!r}")

    @classmethod
    def for_payload(cls, payload_bytes: int, **kw) -> "Frame":
        if payload_bytes > MAX_PAYLOAD:
            raise ValueError(f"payload {payload_bytes} B exceeds one MTU ({MAX_PAYLOAD} B)")
        return cls(size=max(payload_bytes + L2_OVERHEAD, MIN_FRAME), **kw)


class EgressPort:
    """Python-side owner of one kernel: maps ids to frames and keeps a wakeup scheduled."""

    def __init__(self, net: "Network", node: str, link: Link, toward: str):
        self.net = net
        self.node = node
        self.toward = toward
        self.link = link
        self.core = PortCore(link.rate_bps, net.queue_capacity)
        self._fg: dict[int, Frame] = {}
        self._fg_per_class = [0] * 8
        self.fg_started = [0] * 8
        self._wake: Event | None = None
        self._source: ArrivalSource | None = None
        self.gcl: GateControlList | None = None
        self._clock: DisciplinedClock | None = None
        self._shift = 0

    @property
    def name(self) -> str:
        return f"{self.node}->{self.toward}"

    # -- configuration --------------------------------------------------------

    def attach_generator(self, gen: TrafficGenerator, stream: RngStream) -> None:
        src = ArrivalSource(gen, self.link.rate_bps, stream)
        if not src.active:
            return
        self._source = src
        self.core.set_background(gen.pcp, gen.wire_size)

    def attach_gate(self, gcl: GateControlList, clock: DisciplinedClock | None) -> None:
        self.gcl = gcl
        self._clock = clock
        self.core.set_gate(gcl.cycle_time, gcl.all_windows())
        self._refresh_shift(self.net.engine.now)

    # -- kernel plumbing --------------------------------------------------------

    def _ensure(self, until: int) -> None:
        src = self._source
        if src is None:
            return
        while self.core.bg_horizon < until:
            block = src.block()
            self.core.feed(block, int(block[-1]))

    def _refresh_shift(self, now: int) -> None:
        if self.gcl is None:
            return
        err = self._clock.error_ns(now) if self._clock is not None else 0
        epoch = self._clock.epoch if self._clock is not None else 0
        self._shift = epoch + err - self.gcl.base_time
        self.core.set_gate_shift(self._shift)

    def _touch(self, now: int) -> None:
        self._ensure(now + LOOKAHEAD_NS)
        self._dispatch(self.core.advance(now), now)

    def _dispatch(self, starts, now: int) -> None:
        net = self.net
        for fid, start, end in starts:
            frame = self._fg.pop(fid)
            self._fg_per_class[frame.pcp] -= 1
            self.fg_started[frame.pcp] += 1
            if start != now:
                raise InvariantViolation("port-dispatch", f"{self.name}: start {start} != now {now}")
            if self.gcl is not None and not self.gcl.admits(frame.pcp, start + self._shift + self.gcl.base_time,
                                                            end - start):
                raise InvariantViolation("qbv-gate-compliance",
                                         f"{self.name}: frame {fid} pcp {frame.pcp} at {start}")
            hop = frame.hops[-1]
            hop.dequeued_at = start
            hop.tx_end = end
            if len(frame.hops) == 1 and frame.on_tx_start is not None:
                net.engine.schedule(now, net._tx_started, "tx-start", frame)
            net.engine.schedule(end + self.link.propagation_ns, net._arrive, "arrive",
                                (frame, self.toward))

    def _reschedule(self, now: int) -> None:
        eng = self.net.engine
        if self._wake is not None:
            eng.cancel(self._wake)
            self._wake = None
        if not self.core.fg_queued:
            return
        end = self.net.end_time
        t = self.core.next_fg_start(end)
        if t >= 0:
            self._wake = eng.schedule(t, self._on_wake, "port-wake")
        elif self.core.bg_horizon < end:
            self._wake = eng.schedule(max(self.core.bg_horizon, now), self._on_wake, "port-refill")

    def _on_wake(self, ev: Event) -> None:
        self._wake = None
        now = ev.fire_at
        self._touch(now)
        self._refresh_shift(now)
        self._reschedule(now)

    def enqueue(self, frame: Frame, now: int) -> bool:
        self._touch(now)
        frame.hops.append(Hop(self.node, now))
        if not self.core.enqueue(frame.id, frame.size, frame.pcp):
            return False
        self._fg[frame.id] = frame
        self._fg_per_class[frame.pcp] += 1
        self._dispatch(self.core.advance(now), now)
        self._refresh_shift(now)
        self._reschedule(now)
        return True

    def finalize(self, end: int) -> None:
        if self._wake is not None:
            self.net.engine.cancel(self._wake)
            self._wake = None
        self._ensure(end)
        for fid, start, tx_end in self.core.advance(end):
            frame = self._fg.pop(fid)
            self._fg_per_class[frame.pcp] -= 1
            self.fg_started[frame.pcp] += 1

    def stats(self, elapsed: int) -> dict:
        core = self.core
        classes = {}
        for c in range(8):
            bg_started = core.started[c] - self.fg_started[c]
            bg_queued = core.queued(c) - self._fg_per_class[c]
            if core.bg_arrived[c] != core.bg_dropped[c] + bg_started + bg_queued:
                raise InvariantViolation("byte-conservation", f"{self.name} class {c} background")
            if core.started[c] or core.bg_arrived[c]:
                classes[str(c)] = {
                    "frames_started": core.started[c],
                    "bytes_started": core.started_bytes[c],
                    "background_arrived": core.bg_arrived[c],
                    "background_dropped": core.bg_dropped[c],
                }
        return {
            "port": self.name,
            "rate_bps": self.link.rate_bps,
            "utilization": round(core.busy_ns / elapsed, 6) if elapsed else 0.0,
            "gate_violations": core.gate_violations,
            "classes": classes,
        }


class Network:
    """Routes frames hop by hop through store-and-forward bridges."""

    def __init__(self, engine: Engine, topology: Topology, *, queue_capacity: int = 256,
                 bridge_delay_ns: int = 0, end_time: int = 2**62, frame_log: bool = False):
        self.engine = engine
        self.topology = topology
        self.queue_capacity = queue_capacity
        self.bridge_delay_ns = bridge_delay_ns
        self.end_time = end_time
        self._ports: dict[tuple[str, str], EgressPort] = {}
        self._handlers: dict[str, Callable[[Frame, int], None]] = {}
        self._ids = itertools.count()
        self.counts = {k: defaultdict(int) for k in ("sent", "delivered", "dropped")}
        self.drops: list[tuple[int, str, str, int]] = []
        self.frame_log: list[Frame] | None = [] if frame_log else None

    def port(self, node: str, toward: str) -> EgressPort:
        key = (node, toward)
        p = self._ports.get(key)
        if p is None:
            p = self._ports[key] = EgressPort(self, node, self.topology.link(node, toward), toward)
        return p

    @property
    def ports(self) -> list[EgressPort]:
        return [self._ports[k] for k in sorted(self._ports)]

    def attach(self, node: str, handler: Callable[[Frame, int], None]) -> None:
        self._handlers[node] = handler

    def send(self, frame: Frame) -> None:
        now = self.engine.now
        frame.id = next(self._ids)
        self.counts["sent"][(frame.kind, frame.pcp)] += 1
        if frame.src == frame.dst:
            self.engine.schedule(now, self._loopback, "loopback", frame)
            return
        self._forward(frame, frame.src, now)

    def _forward(self, frame: Frame, node: str, now: int) -> None:
        port = self.port(node, self.topology.next_hop(node, frame.dst))
        if not port.enqueue(frame, now):
            self._drop(frame, node, now)

    def _drop(self, frame: Frame, node: str, now: int) -> None:
        self.counts["dropped"][(frame.kind, frame.pcp)] += 1
        self.drops.append((frame.id, frame.kind, node, now))
        if self.frame_log is not None:
            self.frame_log.append(frame)
        if frame.on_drop is not None:
            frame.on_drop(frame, node)

    def _tx_started(self, ev: Event) -> None:
        frame = ev.payload
        frame.on_tx_start(frame, frame.hops[0].dequeued_at)

    def _loopback(self, ev: Event) -> None:
        self._deliver(ev.payload, ev.fire_at)

    def _arrive(self, ev: Event) -> None:
        frame, node = ev.payload
        now = ev.fire_at
        frame.hops[-1].delivered_at = now
        if node == frame.dst:
            self._deliver(frame, now)
        elif self.bridge_delay_ns:
            self.engine.schedule(now + self.bridge_delay_ns, self._bridge_out, "bridge", (frame, node))
        else:
            self._forward(frame, node, now)

    def _bridge_out(self, ev: Event) -> None:
        frame, node = ev.payload
        self._forward(frame, node, ev.fire_at)

    def _deliver(self, frame: Frame, now: int) -> None:
        self.counts["delivered"][(frame.kind, frame.pcp)] += 1
        if self.frame_log is not None:
            self.frame_log.append(frame)
        handler = self._handlers.get(frame.dst)
        if handler is not None:
            handler(frame, now)

    def finalize(self, end: int) -> dict:
        for p in self.ports:
            p.finalize(end)
        elapsed = end
        per_kind = {}
        keys = sorted(set(self.counts["sent"]) | set(self.counts["delivered"]) | set(self.counts["dropped"]))
        for kind, pcp in keys:
            sent = self.counts["sent"][(kind, pcp)]
            delivered = self.counts["delivered"][(kind, pcp)]
            dropped = self.counts["dropped"][(kind, pcp)]
            if delivered + dropped > sent:
                raise InvariantViolation("byte-conservation", f"{kind}/pcp{pcp}")
            per_kind[f"{kind}/pcp{pcp}"] = {"sent": sent, "delivered": delivered, "dropped": dropped,
                                            "in_flight": sent - delivered - dropped}
        return {"ports": [p.stats(elapsed) for p in self.ports], "frames": per_kind,
                "drops": len(self.drops)}


def send(net: Network, frame: Frame) -> None:
    net.send(frame)
