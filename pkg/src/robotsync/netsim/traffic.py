from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import RngStream
from ._portcore_py import wire_time

L2_OVERHEAD = 18


@dataclass
class TrafficGenerator:
    load: float
    frame_size: int = 1500  # payload bytes
    pattern: str = "periodic"
    pcp: int = 0
    start: int = 0

    def __post_init__(self):
        if not 0.0 <= self.load <= 1.0:
            raise ValueError(f"load must be in [0, 1], got {self.load}")
        if self.pattern not in ("periodic", "poisson"):
            raise ValueError(f"pattern must be periodic or poisson, got {self.pattern!r}")
        if not 0 <= self.pcp <= 7:
            raise ValueError("pcp must be 0-7")

    @property
    def wire_size(self) -> int:
        return max(self.frame_size + L2_OVERHEAD, 64)

    def mean_gap(self, rate_bps: int) -> float:
        """Mean inter-departure gap in ns; infinite for zero load."""
        if self.load == 0:
            return float("inf")
        return wire_time(self.wire_size, rate_bps) / self.load


class ArrivalSource:
    """Lazily produces background arrival times in blocks for one egress port."""

    BLOCK = 4096

    def __init__(self, gen: TrafficGenerator, rate_bps: int, stream: RngStream):
        self.gen = gen
        self.gap = gen.mean_gap(rate_bps)
        self.stream = stream
        self._k = 0
        self._last = gen.start

    @property
    def active(self) -> bool:
        return self.gap != float("inf")

    def block(self) -> np.ndarray:
        """Next ``BLOCK`` arrival times (strictly increasing, int64)."""
        n = self.BLOCK
        if self.gen.pattern == "periodic":
            k = np.arange(self._k, self._k + n, dtype=np.float64)
            out = self.gen.start + np.floor(k * self.gap).astype(np.int64)
            self._k += n
        else:
            u = self.stream.uniforms(n)
            gaps = np.maximum(np.rint(-np.log1p(-u) * self.gap), 1).astype(np.int64)
            out = self._last + np.cumsum(gaps)
            self._last = int(out[-1])
        return out


def run_generator(gen: TrafficGenerator, rate_bps: int, stream: RngStream, until: int) -> np.ndarray:
    """All background departure instants in [start, until]."""
    src = ArrivalSource(gen, rate_bps, stream)
    if not src.active:
        return np.empty(0, dtype=np.int64)
    parts = []
    while True:
        b = src.block()
        parts.append(b[b <= until])
        if b[-1] > until:
            break
    return np.concatenate(parts)
