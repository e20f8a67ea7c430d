from __future__ import annotations

from dataclasses import dataclass, field

NUM_CLASSES = 8


@dataclass(frozen=True)
class GateEntry:
    start_offset: int
    duration: int
    open_classes: frozenset[int]


@dataclass
class GateControlList:
    """Periodic Qbv schedule.  Instants not covered by any entry have every gate closed.

    ``base_time`` is a reading of the port owner's clock (POSIX ns) at which a
    cycle starts.
    """

    cycle_time: int
    entries: list[GateEntry] = field(default_factory=list)
    base_time: int = 0

    def __post_init__(self):
        if self.cycle_time <= 0:
            raise ValueError("cycle_time must be positive")
        prev_end = 0
        for e in sorted(self.entries, key=lambda e: e.start_offset):
            if e.duration <= 0:
                raise ValueError("gate entry duration must be positive")
            if e.start_offset < prev_end:
                raise ValueError(f"gate entries overlap at offset {e.start_offset}")
            if e.start_offset + e.duration > self.cycle_time:
                raise ValueError("gate entry extends past cycle_time")
            if any(not 0 <= c < NUM_CLASSES for c in e.open_classes):
                raise ValueError("gate entry names a class outside 0-7")
            prev_end = e.start_offset + e.duration
        self.entries = sorted(self.entries, key=lambda e: e.start_offset)

    def windows(self, pcp: int) -> list[tuple[int, int]]:
        """Merged open intervals of ``pcp`` within [0, cycle_time)."""
        merged: list[tuple[int, int]] = []
        for e in self.entries:
            if pcp not in e.open_classes:
                continue
            s, end = e.start_offset, e.start_offset + e.duration
            if merged and merged[-1][1] == s:
                merged[-1] = (merged[-1][0], end)
            else:
                merged.append((s, end))
        return merged

    def all_windows(self) -> list[list[tuple[int, int]]]:
        return [self.windows(c) for c in range(NUM_CLASSES)]

    def admits(self, pcp: int, local_start: int, wire_ns: int) -> bool:
        """True if [local_start, local_start + wire_ns) lies entirely inside open entries for ``pcp``.

        Walks the raw entries, independently of the merged windows the kernel uses.
        """
        t = local_start
        end = local_start + wire_ns
        while t < end:
            pos = (t - self.base_time) % self.cycle_time
            covering = None
            for e in self.entries:
                if e.start_offset <= pos < e.start_offset + e.duration:
                    covering = e
                    break
            if covering is None or pcp not in covering.open_classes:
                return False
            t += covering.start_offset + covering.duration - pos
        return True
