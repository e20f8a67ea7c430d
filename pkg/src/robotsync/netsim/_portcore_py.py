"""Pure-Python egress-port kernel (fallback for the compiled ``_portcore``).

The kernel simulates one output port lazily: background frames arrive from a
pre-drawn array of arrival times and never become engine events.  Foreground
frames (PTP, topics) are identified by integer ids; ``advance`` reports when
each of them starts transmitting.

Both implementations must produce identical results; tests run against each.
"""

from __future__ import annotations

from collections import deque

import numpy as np

INF = 2**62
NUM_CLASSES = 8
PREAMBLE_IPG = 20


def wire_time(size: int, rate_bps: int) -> int:
    """Serialization time in ns of a frame of ``size`` bytes (IPG/preamble included)."""
    return -((-(size + PREAMBLE_IPG) * 8 * 1_000_000_000) // rate_bps)


class PortCore:
    def __init__(self, rate_bps: int, capacity: int = 256):
        if rate_bps <= 0 or capacity <= 0:
            raise ValueError("rate and capacity must be positive")
        self.rate_bps = int(rate_bps)
        self.capacity = int(capacity)
        self.now = 0
        self.busy_until = 0
        # entries: (size, fg_id) with fg_id -1 for background
        self._q = [deque() for _ in range(NUM_CLASSES)]
        self.fg_queued = 0
        # background source
        self._bg_pcp = 0
        self._bg_size = 0
        self._bg_ser = 0
        self._arr: list[int] = []  # plain ints: indexing a list is much cheaper than numpy
        self._arr_pos = 0
        self.bg_horizon = INF
        # gate: per class list of merged (start, end) windows within [0, cycle)
        self._gated = False
        self._cycle = 0
        self._win: list[list[tuple[int, int]]] = [[] for _ in range(NUM_CLASSES)]
        self._maxwin = [INF] * NUM_CLASSES
        self.gate_shift = 0
        # per-class counters
        self.bg_arrived = [0] * NUM_CLASSES
        self.bg_dropped = [0] * NUM_CLASSES
        self.started = [0] * NUM_CLASSES
        self.started_bytes = [0] * NUM_CLASSES
        self.busy_ns = 0
        self.gate_violations = 0

    # -- configuration --------------------------------------------------------

    def set_background(self, pcp: int, size: int) -> None:
        self._bg_pcp = int(pcp)
        self._bg_size = int(size)
        self._bg_ser = wire_time(size, self.rate_bps)
        self.bg_horizon = self.now

    def feed(self, arrivals, horizon: int) -> None:
        """Append sorted arrival times; all arrivals <= ``horizon`` are now known."""
        arrivals = np.asarray(arrivals, dtype=np.int64).tolist()
        self._arr = self._arr[self._arr_pos:] + arrivals
        self._arr_pos = 0
        self.bg_horizon = int(horizon)

    def set_gate(self, cycle: int, windows: list[list[tuple[int, int]]]) -> None:
        """``windows[c]``: merged, sorted open intervals of class ``c`` in [0, cycle)."""
        self._gated = True
        self._cycle = int(cycle)
        self._win = [[(int(s), int(e)) for s, e in w] for w in windows]
        for c, w in enumerate(self._win):
            if not w:
                self._maxwin[c] = 0
            elif w == [(0, self._cycle)]:
                self._maxwin[c] = INF
            else:
                lens = [e - s for s, e in w]
                if w[0][0] == 0 and w[-1][1] == self._cycle and len(w) > 1:
                    lens.append(w[0][1] + self._cycle - w[-1][0])
                self._maxwin[c] = max(lens)

    def set_gate_shift(self, shift: int) -> None:
        self.gate_shift = int(shift)

    # -- gate arithmetic ------------------------------------------------------

    def _gate(self, c: int, t: int) -> tuple[bool, int]:
        """(open, close instant) if open at ``t``, else (False, next opening)."""
        if not self._gated:
            return True, INF
        w = self._win[c]
        if not w:
            return False, INF
        cyc = self._cycle
        if self._maxwin[c] == INF:
            return True, INF
        pos = (t + self.gate_shift) % cyc
        base = t - pos
        for s, e in w:
            if s <= pos < e:
                if e == cyc and w[0][0] == 0:
                    return True, base + cyc + w[0][1]
                return True, base + e
            if pos < s:
                return False, base + s
        return False, base + cyc + w[0][0]

    def _opportunity(self, c: int, t: int, ser: int) -> int:
        """Earliest time >= t at which a frame of wire time ``ser`` may start in class ``c``."""
        if ser > self._maxwin[c]:
            return INF
        while True:
            is_open, edge = self._gate(c, t)
            if edge >= INF and not is_open:
                return INF
            if is_open:
                if t + ser <= edge:
                    return t
                t = edge
            else:
                t = edge

    # -- queue operations -----------------------------------------------------

    def _push_bg(self, t: int) -> None:
        c = self._bg_pcp
        self.bg_arrived[c] += 1
        q = self._q[c]
        if len(q) >= self.capacity:
            self.bg_dropped[c] += 1
        else:
            q.append((self._bg_size, -1))

    def enqueue(self, fg_id: int, size: int, pcp: int) -> bool:
        q = self._q[pcp]
        if len(q) >= self.capacity:
            return False
        q.append((int(size), int(fg_id)))
        self.fg_queued += 1
        return True

    def queued(self, pcp: int) -> int:
        return len(self._q[pcp])

    def _select(self, t: int):
        """Class to transmit at ``t`` or None; second value is the next retry time."""
        retry = INF
        for c in range(NUM_CLASSES - 1, -1, -1):
            q = self._q[c]
            if not q:
                continue
            ser = wire_time(q[0][0], self.rate_bps) if q[0][1] >= 0 else self._bg_ser
            at = self._opportunity(c, t, ser) if self._gated else t
            if at == t:
                return c, ser, retry
            if at < retry:
                retry = at
        return None, 0, retry

    def select_next(self, now: int):
        """Frame that would start at ``now`` on an idle port: fg id, -1 for background, None if none."""
        if now < self.busy_until:
            return None
        c, _, _ = self._select(now)
        if c is None:
            return None
        return self._q[c][0][1]

    def _run(self, until: int, stop_at_fg: bool, out: list | None) -> int:
        """Simulate up to ``until``; returns the first foreground start if ``stop_at_fg``."""
        arr, pos, n = self._arr, self._arr_pos, len(self._arr)
        t = self.now
        result = -1
        while True:
            free = self.busy_until if self.busy_until > t else t
            if free > until:
                while pos < n and arr[pos] <= until:
                    self._push_bg(arr[pos])
                    pos += 1
                t = until
                break
            while pos < n and arr[pos] <= free:
                self._push_bg(arr[pos])
                pos += 1
            c, ser, retry = self._select(free)
            if c is not None:
                size, fg_id = self._q[c].popleft()
                if self._gated and self._gate_violated(c, free, ser):
                    self.gate_violations += 1
                self.busy_until = free + ser
                self.busy_ns += ser
                self.started[c] += 1
                self.started_bytes[c] += size
                t = free
                if fg_id >= 0:
                    self.fg_queued -= 1
                    if out is not None:
                        out.append((fg_id, free, free + ser))
                    if stop_at_fg:
                        result = free
                        break
                continue
            nxt = arr[pos] if pos < n else INF
            if retry < nxt:
                nxt = retry
            if nxt > until:
                t = until
                break
            t = nxt
        self._arr_pos = pos
        self.now = t
        return result

    def _gate_violated(self, c: int, start: int, ser: int) -> bool:
        is_open, close = self._gate(c, start)
        return not is_open or start + ser > close

    def advance(self, until: int) -> list[tuple[int, int, int]]:
        """Process everything up to ``until``; returns (fg_id, start, end) per started foreground frame."""
        if until < self.now:
            raise ValueError(f"advance to {until} < now {self.now}")
        if until > self.bg_horizon:
            raise ValueError(f"background known only up to {self.bg_horizon}, asked {until}")
        out: list[tuple[int, int, int]] = []
        self._run(until, False, out)
        return out

    def next_fg_start(self, horizon: int) -> int:
        """Start time of the next foreground frame assuming no further external input, or -1."""
        if self.fg_queued == 0:
            return -1
        horizon = min(horizon, self.bg_horizon)
        if horizon < self.now:
            return -1
        saved = self._snapshot()
        try:
            return self._run(horizon, True, None)
        finally:
            self._restore(saved)

    def _snapshot(self):
        return (self.now, self.busy_until, [deque(q) for q in self._q], self._arr_pos, self.fg_queued,
                list(self.bg_arrived), list(self.bg_dropped), list(self.started),
                list(self.started_bytes), self.busy_ns, self.gate_violations)

    def _restore(self, s) -> None:
        (self.now, self.busy_until, self._q, self._arr_pos, self.fg_queued, self.bg_arrived,
         self.bg_dropped, self.started, self.started_bytes, self.busy_ns, self.gate_violations) = s
