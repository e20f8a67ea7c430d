"""Discrete-event core: event queue, simulation time and named random streams.

All times are integer nanoseconds.  ``SimTime`` counts from the simulation
epoch; the POSIX base of that epoch lives on the clocks, not here.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Any, Callable

import numpy as np

DEFAULT_EPOCH_NS = 1_535_967_970_000_000_000
MAX_SIM_TIME = 2**63 - 1

_STD_NORMAL = NormalDist()
_TRUNC = 4.0
_P_LO = _STD_NORMAL.cdf(-_TRUNC)
_P_HI = _STD_NORMAL.cdf(_TRUNC)


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current simulation time."""


class InvariantViolation(AssertionError):
    """A runtime invariant of the simulation fired.

    ``name`` identifies the invariant so the CLI can report it.
    """

    def __init__(self, name: str, detail: str = ""):
        super().__init__(f"{name}: {detail}" if detail else name)
        self.name = name
        self.detail = detail


# ---------------------------------------------------------------------------
# distributions


@dataclass(frozen=True)
class Constant:
    value: float

    kind = "constant"

    def validate(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError("constant value must be finite")

    def sample(self, u: float) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    kind = "uniform"

    def validate(self) -> None:
        if self.low > self.high:
            raise ValueError(f"uniform requires low <= high (got {self.low} > {self.high})")

    def sample(self, u: float) -> float:
        return self.low + (self.high - self.low) * u

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class Normal:
    """Normal distribution truncated at +/-4 sigma (inverse-CDF sampling)."""

    mu: float
    sigma: float

    kind = "normal"

    def validate(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"normal requires sigma >= 0 (got {self.sigma})")

    def sample(self, u: float) -> float:
        if self.sigma == 0:
            return self.mu
        return self.mu + self.sigma * _std_normal_trunc(u)

    def to_dict(self) -> dict:
        return {"kind": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class LogNormal:
    """exp(mu + sigma*z), z truncated at +/-4, then capped at ``cap``."""

    mu: float
    sigma: float
    cap: float = math.inf

    kind = "lognormal"

    def validate(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"lognormal requires sigma >= 0 (got {self.sigma})")
        if not self.cap > 0:
            raise ValueError(f"lognormal requires cap > 0 (got {self.cap})")

    def sample(self, u: float) -> float:
        z = _std_normal_trunc(u) if self.sigma else 0.0
        return min(math.exp(self.mu + self.sigma * z), self.cap)

    @classmethod
    def from_median(cls, median: float, p999: float) -> "LogNormal":
        """Log-normal whose 99.9th percentile sits at ``p999``, capped there."""
        sigma = math.log(p999 / median) / _STD_NORMAL.inv_cdf(0.999)
        return cls(mu=math.log(median), sigma=sigma, cap=p999)

    def to_dict(self) -> dict:
        return {"kind": "lognormal", "mu": self.mu, "sigma": self.sigma, "cap": self.cap}


Distribution = Constant | Uniform | Normal | LogNormal

_DIST_TYPES = {c.kind: c for c in (Constant, Uniform, Normal, LogNormal)}


def _std_normal_trunc(u: float) -> float:
    return _STD_NORMAL.inv_cdf(_P_LO + (_P_HI - _P_LO) * u)


def parse_distribution(spec: Any) -> Distribution:
    """Build a distribution from a number (constant) or a ``{"kind": ...}`` table."""
    if isinstance(spec, (Constant, Uniform, Normal, LogNormal)):
        dist = spec
    elif isinstance(spec, bool):
        raise ValueError("distribution must be a number or a table")
    elif isinstance(spec, (int, float)):
        dist = Constant(float(spec))
    elif isinstance(spec, dict):
        params = dict(spec)
        kind = params.pop("kind", None)
        if kind not in _DIST_TYPES:
            raise ValueError(f"unknown distribution kind {kind!r}; expected one of {sorted(_DIST_TYPES)}")
        try:
            if kind == "lognormal" and "median" in params:
                dist = LogNormal.from_median(float(params.pop("median")), float(params.pop("p999")))
                if params:
                    raise TypeError(f"unexpected keys {sorted(params)}")
            else:
                dist = _DIST_TYPES[kind](**{k: float(v) for k, v in params.items()})
        except (TypeError, KeyError) as exc:
            raise ValueError(f"bad parameters for {kind}: {exc}") from None
    else:
        raise ValueError(f"distribution must be a number or a table, got {type(spec).__name__}")
    dist.validate()
    return dist


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Counter-based (Philox) generator keyed by (scenario seed, stream label).

    Each draw consumes exactly one uniform, so a stream's sequence depends only
    on how many draws *it* has served.
    """

    _BLOCK = 1024

    def __init__(self, seed: int, label: str):
        self.label = label
        digest = hashlib.sha256(f"{seed}/{label}".encode()).digest()
        key = np.frombuffer(digest[:16], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def uniforms(self, n: int) -> np.ndarray:
        """Next ``n`` uniforms of the stream as an array (same sequence as ``uniform``)."""
        head = self._buf[self._pos:self._pos + n]
        self._pos += len(head)
        rest = n - len(head)
        if rest:
            return np.concatenate([np.asarray(head, dtype=float), self._gen.random(rest)])
        return np.asarray(head, dtype=float)

    def draw(self, dist: Distribution) -> float:
        if isinstance(dist, Constant):
            return dist.value
        return dist.sample(self.uniform())


def draw(stream: RngStream, dist: Distribution) -> float:
    return stream.draw(dist)


class RngFactory:
    """Hands out one stream per label; repeated requests return the same stream."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, RngStream] = {}

    def stream(self, label: str) -> RngStream:
        s = self._streams.get(label)
        if s is None:
            s = self._streams[label] = RngStream(self.seed, label)
        return s


# ---------------------------------------------------------------------------
# events


class Event:
    __slots__ = ("fire_at", "target", "kind", "sequence", "payload", "state")

    PENDING, FIRED, CANCELLED = "pending", "fired", "cancelled"

    def __init__(self, fire_at: int, target: Callable[["Event"], Any], kind: str,
                 sequence: int, payload: Any = None):
        self.fire_at = fire_at
        self.target = target
        self.kind = kind
        self.sequence = sequence
        self.payload = payload
        self.state = Event.PENDING

    def __repr__(self) -> str:
        return f"Event({self.fire_at}, {self.kind!r}, seq={self.sequence}, {self.state})"


class Engine:
    """Single-threaded event loop ordered by (fire_at, sequence)."""

    def __init__(self, seed: int = 0, *, record_log: bool = False):
        self.now = 0
        self.rng = RngFactory(seed)
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = itertools.count()
        self._last_fired = 0
        self.processed = 0
        self.log: list[tuple[int, int, str]] | None = [] if record_log else None

    def schedule(self, fire_at: int, target: Callable[[Event], Any], kind: str,
                 payload: Any = None) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule {kind!r} at {fire_at} < now {self.now}")
        if fire_at > MAX_SIM_TIME:
            raise SchedulingError(f"fire_at {fire_at} beyond the 2^63 ns horizon")
        ev = Event(fire_at, target, kind, next(self._seq), payload)
        heapq.heappush(self._queue, (fire_at, ev.sequence, ev))
        return ev

    def schedule_in(self, delay: int, target: Callable[[Event], Any], kind: str,
                    payload: Any = None) -> Event:
        return self.schedule(self.now + delay, target, kind, payload)

    @staticmethod
    def cancel(event: Event) -> str:
        if event.state == Event.FIRED:
            return "already fired"
        if event.state == Event.CANCELLED:
            return "already cancelled"
        event.state = Event.CANCELLED
        return "cancelled"

    def run_until(self, deadline: int) -> int:
        if deadline < self.now:
            raise SchedulingError(f"deadline {deadline} < now {self.now}")
        q = self._queue
        count = 0
        log = self.log
        while q and q[0][0] <= deadline:
            fire_at, _, ev = heapq.heappop(q)
            if ev.state != Event.PENDING:
                continue
            if fire_at < self._last_fired:
                raise InvariantViolation("event-order", f"popped {fire_at} after {self._last_fired}")
            self._last_fired = fire_at
            self.now = fire_at
            ev.state = Event.FIRED
            if log is not None:
                log.append((fire_at, ev.sequence, ev.kind))
            ev.target(ev)
            count += 1
        self.now = deadline
        self.processed += count
        return count

    @property
    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if ev.state == Event.PENDING)
