"""Node clocks: oscillator error, servo corrections and timestamping noise.

A clock reading is ``epoch + t + err(t)`` where ``t`` is the true simulation
time and ``err`` integrates the oscillator's rate error plus whatever the
servo applied.  ``err`` is kept as a float; readings are rounded to integer
nanoseconds, which stays monotone because the total rate never drops below
``1 - 1500 ppm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .engine import Distribution, Engine, Event, InvariantViolation, Normal, RngStream

SECOND = 1_000_000_000
SLEW_CAP_PPM = 500.0
DRIFT_BOUND_PPM = 1000.0


@dataclass
class OscillatorModel:
    initial_offset_ns: int = 0
    drift_ppm: float = 0.0
    wander_sigma_ppm: float = 0.0
    jitter_sigma_ns: float = 0.0

    def __post_init__(self):
        if abs(self.drift_ppm) >= DRIFT_BOUND_PPM:
            raise ValueError(f"|drift| must stay below {DRIFT_BOUND_PPM} ppm")
        if self.wander_sigma_ppm < 0 or self.jitter_sigma_ns < 0:
            raise ValueError("wander and jitter sigmas must be non-negative")


class DisciplinedClock:
    """Oscillator plus servo-controlled phase and frequency corrections.

    Positive phase steps apply immediately.  Negative steps apply immediately
    only while the clock has never been read; afterwards they become a slew at
    ``SLEW_CAP_PPM`` so readings never go backwards.
    """

    def __init__(self, oscillator: OscillatorModel | None = None, *, epoch: int = 0,
                 wander_stream: RngStream | None = None, name: str = ""):
        self.oscillator = oscillator or OscillatorModel()
        self.epoch = epoch
        self.name = name
        self.frequency_correction = 0.0
        self.phase_correction = 0
        self.last_update = 0
        self._err = float(self.oscillator.initial_offset_ns)
        self._wander = 0.0
        self._next_wander = SECOND
        self._wander_stream = wander_stream
        if self.oscillator.wander_sigma_ppm and wander_stream is None:
            raise ValueError("a wander stream is required when wander_sigma_ppm > 0")
        self._slew_left = 0.0  # ns still to remove, <= 0
        self.ever_read = False
        self._last_value: int | None = None

    # -- integration ---------------------------------------------------------

    @property
    def rate_ppm(self) -> float:
        """Current rate error excluding any in-progress slew."""
        return self.oscillator.drift_ppm + self._wander + self.frequency_correction

    @property
    def slewing(self) -> bool:
        return self._slew_left < 0

    def _advance(self, t: int) -> None:
        if t < self.last_update:
            raise ValueError(f"clock {self.name!r} read at {t} before last update {self.last_update}")
        anchor = self.last_update
        sigma = self.oscillator.wander_sigma_ppm
        while anchor < t:
            seg_end = min(t, self._next_wander) if sigma else t
            dt = seg_end - anchor
            self._err += dt * self.rate_ppm * 1e-6
            if self._slew_left < 0:
                step = max(self._slew_left, -SLEW_CAP_PPM * 1e-6 * dt)
                self._err += step
                self._slew_left -= step
                if self._slew_left > -1e-9:
                    self._slew_left = 0.0
            anchor = seg_end
            if sigma and anchor == self._next_wander:
                self._wander += sigma * self._wander_stream.draw(_UNIT_NORMAL)
                self._next_wander += SECOND
        self.last_update = t

    def error_ns(self, t: int) -> int:
        """Reading minus ``epoch + t``; an oracle view that does not mark the clock read."""
        self._advance(t)
        return math.floor(self._err + 0.5)

    def reading(self, t: int) -> int:
        return self.epoch + t + self.error_ns(t)

    def local_now(self, t: int) -> int:
        value = self.reading(t)
        self.ever_read = True
        if self._last_value is not None and value < self._last_value:
            raise InvariantViolation("clock-monotonic",
                                     f"{self.name}: {value} < {self._last_value} at t={t}")
        self._last_value = value
        return value

    # -- corrections ---------------------------------------------------------

    def apply_correction(self, t: int, phase_step: int, freq_adjust: float | None = None) -> None:
        """Apply a servo output at true time ``t``.

        ``phase_step`` replaces any slew still in progress (0 cancels it);
        ``freq_adjust`` is the new total frequency correction in ppm.
        """
        self._advance(t)
        self._slew_left = 0.0
        if phase_step > 0 or (phase_step < 0 and not self.ever_read):
            self._err += phase_step
            self.phase_correction += phase_step
        elif phase_step < 0:
            self._slew_left = float(phase_step)
            self.phase_correction += phase_step
        if freq_adjust is not None:
            self.frequency_correction = float(freq_adjust)

    def true_time_for(self, local_target: int, now: int) -> int:
        """Earliest true time (>= now) at which the reading should reach ``local_target``.

        Ignores future wander steps and corrections, so callers re-check on wake.
        """
        remaining = local_target - self.reading(now)
        if remaining <= 0:
            return now
        rate = 1.0 + self.rate_ppm * 1e-6
        if self._slew_left < 0:
            slew_rate = rate - SLEW_CAP_PPM * 1e-6
            slew_time = -self._slew_left / (SLEW_CAP_PPM * 1e-6)
            gained = slew_time * slew_rate
            if remaining <= gained:
                return now + math.ceil(remaining / slew_rate)
            return now + math.ceil(slew_time + (remaining - gained) / rate)
        return now + math.ceil(remaining / rate)


_UNIT_NORMAL = Normal(0.0, 1.0)


class LocalTimer:
    """Sleep until a local-clock instant (absolute timer semantics).

    The wake-up is predicted from the clock's current rate; if a correction
    landed in between, the timer re-arms until the reading has reached the
    target.
    """

    def __init__(self, engine: Engine, clock: DisciplinedClock, callback, kind: str = "timer"):
        self.engine, self.clock, self.callback, self.kind = engine, clock, callback, kind
        self.target: int | None = None
        self._ev: Event | None = None

    def arm(self, local_target: int, now: int) -> None:
        self.target = local_target
        self._ev = self.engine.schedule(self.clock.true_time_for(local_target, now), self._wake, self.kind)

    def cancel(self) -> None:
        if self._ev is not None:
            self.engine.cancel(self._ev)
            self._ev = None

    def _wake(self, ev: Event) -> None:
        now = ev.fire_at
        if self.clock.local_now(now) < self.target:
            t = self.clock.true_time_for(self.target, now)
            self._ev = self.engine.schedule(max(t, now + 1), self._wake, self.kind)
            return
        self._ev = None
        self.callback(now)


def local_now(clock: DisciplinedClock, true_time: int) -> int:
    return clock.local_now(true_time)


def apply_correction(clock: DisciplinedClock, phase_step: int, freq_adjust: float | None,
                     at: int) -> DisciplinedClock:
    clock.apply_correction(at, phase_step, freq_adjust)
    return clock


# ---------------------------------------------------------------------------
# timestamping


@dataclass
class TimestampModel:
    kind: str = "hardware"
    noise: Distribution = field(default_factory=lambda: Normal(0.0, 50.0))

    def __post_init__(self):
        if self.kind not in ("hardware", "software"):
            raise ValueError(f"timestamp kind must be hardware or software, not {self.kind!r}")
        if self.kind == "software" and _can_be_negative(self.noise):
            raise ValueError("software timestamp noise must be one-sided (non-negative)")


def _can_be_negative(dist: Distribution) -> bool:
    kind = dist.kind
    if kind == "constant":
        return dist.value < 0
    if kind == "uniform":
        return dist.low < 0
    if kind == "normal":
        return dist.sigma > 0 or dist.mu < 0
    return False


def stamp(model: TimestampModel, clock: DisciplinedClock, true_time: int,
          stream: RngStream) -> int:
    """Clock reading plus one noise draw (and the oscillator's read jitter, if any)."""
    noise = stream.draw(model.noise)
    jitter = clock.oscillator.jitter_sigma_ns
    if jitter:
        noise += jitter * stream.draw(_UNIT_NORMAL)
    # readings are ~1.5e18 ns, beyond float precision: round the noise alone
    return clock.local_now(true_time) + math.floor(noise + 0.5)
