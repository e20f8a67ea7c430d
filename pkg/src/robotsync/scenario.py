"""Scenario schema, the built-in experiment presets, and override handling."""

from __future__ import annotations

import copy
import json
import logging
import sys
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .engine import DEFAULT_EPOCH_NS, parse_distribution
from .netsim.network import MAX_PAYLOAD

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_SEED = 0xC0B07
MS = 1_000_000
US = 1_000

DistSpec = Any  # number or {"kind": ...} table, checked by parse_distribution


def _dist(v):
    parse_distribution(v)
    return v


def _one_sided(v):
    d = parse_distribution(v)
    lo = {"constant": lambda: d.value, "uniform": lambda: d.low,
          "normal": lambda: d.mu - 4 * d.sigma, "lognormal": lambda: 0.0}[d.kind]()
    if lo < 0:
        raise ValueError("latency distributions must be non-negative")
    return v


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TopologySpec(_Model):
    chain: list[str] = ["controller", "motor1", "motor2", "motor3", "rangefinder"]
    bridges: list[str] = []
    rate_bps: int = Field(1_000_000_000, gt=0)
    propagation_ns: int = Field(500, ge=0)
    bridge_delay_ns: int = Field(0, ge=0)
    queue_capacity: int = Field(256, gt=0)
    subscriber: str = "controller"

    @model_validator(mode="after")
    def _check(self):
        if len(set(self.chain)) != len(self.chain) or len(self.chain) < 2:
            raise ValueError("chain needs at least two distinct nodes")
        for b in self.bridges:
            if b not in self.chain:
                raise ValueError(f"bridge {b!r} not in chain")
        if self.subscriber not in self.chain or self.subscriber in self.bridges:
            raise ValueError(f"subscriber {self.subscriber!r} must be an endpoint of the chain")
        return self


class NodeClockSpec(_Model):
    initial_offset_ns: DistSpec = None
    drift_ppm: DistSpec = None
    wander_sigma_ppm: float | None = Field(None, ge=0)
    jitter_sigma_ns: float | None = Field(None, ge=0)

    @field_validator("initial_offset_ns", "drift_ppm")
    @classmethod
    def _d(cls, v):
        return v if v is None else _dist(v)


class ClocksSpec(_Model):
    initial_offset_ns: DistSpec = {"kind": "uniform", "low": -2 * MS, "high": 2 * MS}
    drift_ppm: DistSpec = {"kind": "uniform", "low": -10.0, "high": 10.0}
    wander_sigma_ppm: float = Field(0.001, ge=0)
    jitter_sigma_ns: float = Field(0.0, ge=0)
    nodes: dict[str, NodeClockSpec] = {}

    @field_validator("initial_offset_ns", "drift_ppm")
    @classmethod
    def _d(cls, v):
        return _dist(v)


class TimestampSpec(_Model):
    kind: Literal["hardware", "software"] = "hardware"
    noise: DistSpec = {"kind": "normal", "mu": 0.0, "sigma": 50.0}

    @field_validator("noise")
    @classmethod
    def _d(cls, v):
        return _dist(v)


class PtpSpec(_Model):
    enabled: bool = False
    master: str = "controller"
    sync_interval_ns: int = Field(125 * MS, gt=0)
    delay_req_interval_ns: int = Field(1000 * MS, gt=0)
    delay_req_phase_ns: int = Field(50 * MS, ge=0)
    timestamp: TimestampSpec = TimestampSpec()
    kp: float = Field(0.7, ge=0)
    ki: float = Field(0.3, ge=0)
    step_threshold_ns: int = Field(10_000, gt=0)
    lock_threshold_ns: int = Field(1_000, gt=0)
    lock_samples: int = Field(5, gt=0)
    delay_window: int = Field(32, gt=0)
    outlier_factor: float = Field(3.0, gt=1)
    delay_filter: Literal["median", "min"] = "min"
    lock_min_delay_samples: int = Field(8, ge=0)
    frame_size: int = Field(90, ge=64, le=1518)


class PublisherSpec(_Model):
    topic: str
    node: str
    period_ns: int = Field(100 * MS, gt=0)
    timer_mode: Literal["relative", "absolute"] = "absolute"
    exec_time: DistSpec = 1 * MS
    message_size: int = Field(256, gt=0, le=MAX_PAYLOAD)
    pcp: int | None = Field(None, ge=0, le=7)

    @field_validator("exec_time")
    @classmethod
    def _d(cls, v):
        return _one_sided(v)


class StackSpec(_Model):
    publish_latency: DistSpec = {"kind": "lognormal", "median": 150 * US, "p999": 400 * US}
    subscribe_latency: DistSpec = {"kind": "lognormal", "median": 1100 * US, "p999": 1600 * US}
    stamp_jitter: DistSpec = {"kind": "lognormal", "median": 15 * US, "p999": 60 * US}

    @field_validator("publish_latency", "subscribe_latency", "stamp_jitter")
    @classmethod
    def _d(cls, v):
        return _one_sided(v)


class TrafficSpec(_Model):
    node: str
    toward: str
    load: float = Field(ge=0, le=1)
    frame_size: int = Field(1500, gt=0, le=MAX_PAYLOAD)
    pattern: Literal["periodic", "poisson"] = "periodic"
    start_ns: int = Field(0, ge=0)


class GateEntrySpec(_Model):
    start_ns: int = Field(ge=0)
    duration_ns: int = Field(gt=0)
    open_classes: list[int]

    @field_validator("open_classes")
    @classmethod
    def _c(cls, v):
        if any(not 0 <= c <= 7 for c in v):
            raise ValueError("classes must be 0-7")
        return sorted(set(v))


class QbvSpec(_Model):
    node: str
    toward: str
    cycle_ns: int = Field(gt=0)
    base_time_ns: int = 0
    entries: list[GateEntrySpec]
    clock: Literal["local", "ideal"] = "local"


class PrioritySpec(_Model):
    ptp: int = Field(0, ge=0, le=7)
    topic: int = Field(0, ge=0, le=7)
    background: int = Field(0, ge=0, le=7)


class Scenario(_Model):
    name: str = "custom"
    epoch: int = DEFAULT_EPOCH_NS
    duration: float = Field(600.0, gt=0)
    seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)
    topology: TopologySpec = TopologySpec()
    clocks: ClocksSpec = ClocksSpec()
    ptp: PtpSpec = PtpSpec()
    publishers: list[PublisherSpec] = []
    stack: StackSpec = StackSpec()
    traffic: list[TrafficSpec] = []
    qbv: list[QbvSpec] = []
    priority: PrioritySpec = PrioritySpec()
    frame_log: bool = False

    @model_validator(mode="after")
    def _check(self):
        nodes = set(self.topology.chain)
        endpoints = nodes - set(self.topology.bridges)
        adjacent = set(zip(self.topology.chain, self.topology.chain[1:]))
        adjacent |= {(b, a) for a, b in adjacent}
        topics = [p.topic for p in self.publishers]
        if len(set(topics)) != len(topics):
            raise ValueError("topic names must be unique")
        for p in self.publishers:
            if p.node not in endpoints or p.node == self.topology.subscriber:
                raise ValueError(f"publisher {p.topic!r}: node {p.node!r} is not a module endpoint")
        for name in self.clocks.nodes:
            if name not in nodes:
                raise ValueError(f"clocks.nodes: unknown node {name!r}")
        for kind, items in (("traffic", self.traffic), ("qbv", self.qbv)):
            for t in items:
                if (t.node, t.toward) not in adjacent:
                    raise ValueError(f"{kind}: {t.node!r} -> {t.toward!r} is not a link")
        if self.ptp.enabled and self.ptp.master not in endpoints:
            raise ValueError(f"ptp.master {self.ptp.master!r} is not an endpoint")
        for q in self.qbv:
            # let the gate model check overlap and containment
            from .netsim.gates import GateControlList, GateEntry
            GateControlList(q.cycle_ns, [GateEntry(e.start_ns, e.duration_ns, frozenset(e.open_classes))
                                         for e in q.entries], q.base_time_ns)
        return self

    def expanded(self) -> dict:
        return self.model_dump(mode="json")


# ---------------------------------------------------------------------------
# presets

MOTORS = ("motor1", "motor2", "motor3")


def _motor_publishers(mode: str) -> list[dict]:
    return [{"topic": f"/{m}/state", "node": m, "timer_mode": mode, "message_size": 256} for m in MOTORS]


def _rangefinder(mode: str, period: int = 100 * MS, pcp: int | None = None) -> dict:
    d = {"topic": "/rangefinder/range", "node": "rangefinder", "timer_mode": mode,
         "period_ns": period, "message_size": 512}
    if pcp is not None:
        d["pcp"] = pcp
    return d


def _congestion(cos: bool) -> dict:
    return {
        "topology": {"chain": ["controller", "bridge0", "motor1", "motor2", "motor3", "rangefinder"],
                     "bridges": ["bridge0"], "rate_bps": 100_000_000},
        "ptp": {"enabled": True},
        "publishers": _motor_publishers("absolute") + [_rangefinder("absolute")],
        "traffic": [{"node": "bridge0", "toward": "controller", "load": 0.9, "frame_size": 1500,
                     "pattern": "poisson"}],
        "priority": {"ptp": 7, "topic": 6, "background": 0} if cos else {"ptp": 0, "topic": 0, "background": 0},
    }


PRESETS: dict[str, tuple[str, dict]] = {
    "unsync-relative": ("relative timers, no clock synchronization", {
        "publishers": _motor_publishers("relative") + [_rangefinder("relative")],
    }),
    "unsync-absolute": ("absolute timers, no clock synchronization", {
        "publishers": _motor_publishers("absolute") + [_rangefinder("absolute")],
    }),
    "ptp-sync": ("absolute timers with PTP synchronization", {
        "ptp": {"enabled": True},
        "publishers": _motor_publishers("absolute") + [_rangefinder("absolute")],
    }),
    "congestion-90": ("90% background load on a 100 Mbps hop, single traffic class", _congestion(False)),
    "congestion-90-cos": ("90% background load with PCP prioritization of PTP and topics", _congestion(True)),
    "qbv-range-finder": ("range finder on a 10 ms Qbv window, synchronized motors", {
        "ptp": {"enabled": True, "sync_interval_ns": 125 * MS},
        "publishers": _motor_publishers("absolute") + [_rangefinder("relative", 10 * MS, pcp=5)],
        "qbv": [{"node": "rangefinder", "toward": "motor3", "cycle_ns": 10 * MS, "base_time_ns": 0,
                 "entries": [{"start_ns": 0, "duration_ns": 100 * US, "open_classes": list(range(8))},
                             {"start_ns": 100 * US, "duration_ns": 10 * MS - 100 * US,
                              "open_classes": [0, 1, 2, 3, 4, 6, 7]}]}],
    }),
}


def list_presets() -> list[tuple[str, str]]:
    return [(k, v[0]) for k, v in PRESETS.items()]


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    d = copy.deepcopy(PRESETS[name][1])
    d["name"] = name
    return d


# ---------------------------------------------------------------------------
# loading


class ScenarioError(ValueError):
    pass


def parse_value(text: str):
    """Override values: JSON when it parses (numbers, booleans, lists, tables), else a string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_path(data: dict, dotted: str, value) -> None:
    """Assign ``value`` at a dotted path; integer parts index lists."""
    parts = dotted.split(".")
    cur: Any = data
    for i, key in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(cur, list):
            try:
                idx = int(key)
                cur[idx]
            except (ValueError, IndexError):
                raise ScenarioError(f"--set {dotted}: {key!r} is not a valid index") from None
            if last:
                cur[idx] = value
            else:
                cur = cur[idx]
            continue
        if last:
            if key in cur and cur[key] != value:
                log.info("override %s: %r -> %r", dotted, cur[key], value)
            cur[key] = value
        else:
            nxt = cur.get(key)
            if nxt is None:
                nxt = cur[key] = {}
            cur = nxt


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for e in exc.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<scenario>"
        lines.append(f"{where}: {e['msg']}")
    return "; ".join(lines)


def from_dict(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        raise ScenarioError(_format_errors(exc)) from None


def read_file(path) -> dict:
    p = Path(path)
    text = p.read_text()
    if p.suffix == ".json":
        return json.loads(text)
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{p}: {exc}") from None


def load(source: str, overrides: dict[str, Any] | None = None, *, seed: int | None = None,
         duration: float | None = None) -> Scenario:
    """Preset id or scenario file, plus dotted overrides (which win over the source)."""
    if source in PRESETS:
        data = preset_dict(source)
    elif Path(source).is_file():
        data = read_file(source)
        data.setdefault("name", Path(source).stem)
    else:
        raise ScenarioError(f"{source!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    for key, value in (overrides or {}).items():
        set_path(data, key, value)
    if seed is not None:
        set_path(data, "seed", seed)
    if duration is not None:
        set_path(data, "duration", duration)
    return from_dict(data)


def validate(path) -> Scenario:
    return from_dict(read_file(path))
