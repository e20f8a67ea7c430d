"""Two-step, end-to-end PTP over the simulated network, with a PI servo."""

from __future__ import annotations

import statistics
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

from .clocks import DisciplinedClock, LocalTimer, TimestampModel, stamp
from .engine import Engine, RngStream
from .netsim.network import Frame, Network

SYNC, FOLLOW_UP, DELAY_REQ, DELAY_RESP = "sync", "follow_up", "delay_req", "delay_resp"


class IncompleteSample(ValueError):
    pass


@dataclass
class SyncSample:
    t1: int | None = None
    t2: int | None = None
    t3: int | None = None
    t4: int | None = None


def _half(x: int) -> int:
    # integer halving, truncating toward zero
    return x // 2 if x >= 0 else -((-x) // 2)


def compute_offset_delay(s: SyncSample) -> tuple[int, int]:
    """(offset, mean path delay) from the four timestamps of one exchange."""
    if None in (s.t1, s.t2, s.t3, s.t4):
        raise IncompleteSample("sync sample needs t1..t4")
    ms = s.t2 - s.t1
    sm = s.t4 - s.t3
    return _half(ms - sm), _half(ms + sm)


@dataclass
class ServoState:
    kp: float = 0.7
    ki: float = 0.3
    interval_ns: int = 125_000_000
    step_threshold_ns: int = 10_000
    lock_threshold_ns: int = 1_000
    lock_samples: int = 5
    integrator_limit_ppm: float = 100.0
    integrator: float = 0.0
    locked: bool = False
    good: int = 0
    freq: float = 0.0
    lock_losses: int = 0
    steps: int = 0


def servo_update(state: ServoState, offset: int) -> tuple[int, float]:
    """One servo iteration.  Returns (phase step ns, total frequency correction ppm)."""
    if state.locked and abs(offset) > state.step_threshold_ns:
        state.locked = False
        state.lock_losses += 1
        state.good = 0
    if not state.locked and abs(offset) > state.step_threshold_ns:
        state.good = 0
        state.steps += 1
        return -offset, state.freq
    x = offset / state.interval_ns * 1e6
    lim = state.integrator_limit_ppm
    state.integrator = min(lim, max(-lim, state.integrator + x))
    state.freq = -(state.kp * x + state.ki * state.integrator)
    if abs(offset) < state.lock_threshold_ns:
        state.good += 1
        if state.good >= state.lock_samples:
            state.locked = True
    else:
        state.good = 0
    return 0, state.freq


@dataclass
class PtpPort:
    role: str
    peer: str
    sync_interval: int = 125_000_000
    delay_req_interval: int = 1_000_000_000
    timestamp_model: TimestampModel = field(default_factory=TimestampModel)

    def __post_init__(self):
        if self.role not in ("master", "slave"):
            raise ValueError(f"PTP role must be master or slave, not {self.role!r}")


class OffsetRecord(NamedTuple):
    at: int
    estimated_offset: int
    true_offset: int
    path_delay: int


@dataclass
class PtpMessage:
    type: str
    seq: int
    slave: str
    timestamp: int | None = None


@dataclass
class PtpConfig:
    frame_size: int = 90
    pcp: int = 7
    delay_window: int = 32
    outlier_factor: float = 3.0
    # "min" keeps the lowest accepted sample in the window, which tracks the
    # uncongested path when queueing only ever adds delay; "median" is the
    # alternative for symmetric noise
    delay_filter: str = "min"
    lock_min_delay_samples: int = 8

    def __post_init__(self):
        if self.delay_filter not in ("median", "min"):
            raise ValueError(f"delay_filter must be median or min, not {self.delay_filter!r}")


class PtpMaster:
    """Grandmaster side: periodic sync + follow-up per slave, answers delay requests."""

    def __init__(self, engine: Engine, net: Network, node: str, clock: DisciplinedClock,
                 slaves: list[str], port: PtpPort, cfg: PtpConfig, stream: RngStream):
        if port.role != "master":
            raise ValueError("master agent needs a master port")
        self.engine, self.net, self.node, self.clock = engine, net, node, clock
        self.slaves = list(slaves)
        self.port, self.cfg, self.stream = port, cfg, stream
        self._seq = 0
        self.timer = LocalTimer(engine, clock, self._cycle, "ptp-sync-cycle")

    def start(self, at: int = 0) -> None:
        """First sync at the next multiple of the sync interval on the master clock after ``at``."""
        local = self.clock.local_now(at)
        iv = self.port.sync_interval
        self.timer.arm((local // iv + 1) * iv, at)

    def _frame(self, dst: str, msg: PtpMessage) -> Frame:
        return Frame(src=self.node, dst=dst, size=self.cfg.frame_size, pcp=self.cfg.pcp,
                     kind="ptp", payload=msg)

    def _cycle(self, now: int) -> None:
        self.run_sync_cycle()
        iv = self.port.sync_interval
        self.timer.arm((self.clock.local_now(now) // iv + 1) * iv, now)

    def run_sync_cycle(self) -> None:
        seq = self._seq
        self._seq += 1
        for slave in self.slaves:
            f = self._frame(slave, PtpMessage(SYNC, seq, slave))
            f.on_tx_start = self._sync_sent
            self.net.send(f)

    def _sync_sent(self, frame: Frame, t: int) -> None:
        msg = frame.payload
        t1 = stamp(self.port.timestamp_model, self.clock, t, self.stream)
        self.net.send(self._frame(msg.slave, PtpMessage(FOLLOW_UP, msg.seq, msg.slave, t1)))

    def receive(self, frame: Frame, now: int) -> None:
        msg = frame.payload
        if msg.type != DELAY_REQ:
            return
        t4 = stamp(self.port.timestamp_model, self.clock, now, self.stream)
        self.net.send(self._frame(msg.slave, PtpMessage(DELAY_RESP, msg.seq, msg.slave, t4)))


class PtpSlave:
    """Slave side: gathers t1..t4, filters path delay, drives the servo."""

    def __init__(self, engine: Engine, net: Network, node: str, clock: DisciplinedClock,
                 master: str, master_clock: DisciplinedClock, port: PtpPort, servo: ServoState,
                 cfg: PtpConfig, stream: RngStream):
        if port.role != "slave":
            raise ValueError("slave agent needs a slave port")
        self.engine, self.net, self.node, self.clock = engine, net, node, clock
        self.master, self.master_clock = master, master_clock
        self.port, self.servo, self.cfg, self.stream = port, servo, cfg, stream
        self.records: list[OffsetRecord] = []
        self.delays: deque[int] = deque(maxlen=cfg.delay_window)
        self.delay_estimate: int | None = None
        self.rejected = 0
        self.lock_time: int | None = None
        self._sync_seq: int | None = None
        self._t2: int | None = None
        self._pair: tuple[int, int, int] | None = None  # (t1, t2, correction epoch)
        self._epoch = 0
        self._req_seq = 0
        self._pending_req: dict[int, tuple[int, int, int, int]] = {}
        self.timer = LocalTimer(engine, clock, self._delay_cycle, "ptp-delay-cycle")
        self._phase = 0

    def start(self, at: int = 0, phase: int = 50_000_000) -> None:
        """Delay requests at local instants ``k * delay_req_interval + phase``."""
        self._phase = phase
        self._arm_delay(at)

    def _arm_delay(self, now: int) -> None:
        iv = self.port.delay_req_interval
        local = self.clock.local_now(now) - self._phase
        self.timer.arm((local // iv + 1) * iv + self._phase, now)

    def _delay_cycle(self, now: int) -> None:
        self._send_delay_req()
        self._arm_delay(now)

    def _send_delay_req(self) -> None:
        seq = self._req_seq
        self._req_seq += 1
        f = Frame(src=self.node, dst=self.master, size=self.cfg.frame_size, pcp=self.cfg.pcp,
                  kind="ptp", payload=PtpMessage(DELAY_REQ, seq, self.node))
        f.on_tx_start = self._delay_req_sent
        self.net.send(f)

    def _delay_req_sent(self, frame: Frame, t: int) -> None:
        t3 = stamp(self.port.timestamp_model, self.clock, t, self.stream)
        if self._pair is not None:
            t1, t2, epoch = self._pair
            self._pending_req[frame.payload.seq] = (t1, t2, t3, epoch)

    def receive(self, frame: Frame, now: int) -> None:
        msg = frame.payload
        if msg.type == SYNC:
            self._sync_seq = msg.seq
            self._t2 = stamp(self.port.timestamp_model, self.clock, now, self.stream)
        elif msg.type == FOLLOW_UP:
            if msg.seq == self._sync_seq and self._t2 is not None:
                self._on_sync_pair(msg.timestamp, self._t2, now)
        elif msg.type == DELAY_RESP:
            pending = self._pending_req.pop(msg.seq, None)
            if pending is not None:
                self._on_delay_resp(pending, msg.timestamp)

    def _on_delay_resp(self, pending: tuple[int, int, int, int], t4: int) -> None:
        t1, t2, t3, epoch = pending
        if epoch != self._epoch or self.clock.slewing:
            return
        _, delay = compute_offset_delay(SyncSample(t1, t2, t3, t4))
        if len(self.delays) >= 3:
            med = statistics.median_low(self.delays)
            k = self.cfg.outlier_factor
            if med > 0 and (delay > k * med or delay * k < med):
                self.rejected += 1
                return
        self.delays.append(delay)
        if self.cfg.delay_filter == "min":
            self.delay_estimate = min(self.delays)
        else:
            self.delay_estimate = statistics.median_low(self.delays)

    def _on_sync_pair(self, t1: int, t2: int, now: int) -> None:
        delay = self.delay_estimate or 0
        offset = (t2 - t1) - delay
        phase, freq = servo_update(self.servo, offset)
        if len(self.delays) < self.cfg.lock_min_delay_samples:
            # until the delay filter has settled, offsets may steer the clock but not lock it
            self.servo.good = 0
            self.servo.locked = False
        if phase:
            self._epoch += 1
        self.clock.apply_correction(now, phase, freq)
        self._pair = (t1, t2, self._epoch) if not phase else None
        if self.servo.locked and self.lock_time is None:
            self.lock_time = now
        true_offset = self.clock.error_ns(now) - self.master_clock.error_ns(now) + (
            self.clock.epoch - self.master_clock.epoch)
        self.records.append(OffsetRecord(now, offset, true_offset, delay))


def max_offset_series(records: list[OffsetRecord], interval: int = 1_000_000_000,
                      *, field_name: str = "true_offset") -> list[tuple[int, int]]:
    """Per-interval maximum absolute offset; empty intervals omitted."""
    out: dict[int, int] = {}
    for r in records:
        idx = r.at // interval
        v = abs(getattr(r, field_name))
        if v > out.get(idx, -1):
            out[idx] = v
    return sorted(out.items())
