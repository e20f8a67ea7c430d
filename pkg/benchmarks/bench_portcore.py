"""Compare the compiled and pure-Python egress-port kernels.

Two measurements:
  kernel   one port at 90% poisson load, a foreground frame every ms (kernel calls only)
  scenario a congestion-90 run end to end, each kernel selected in a fresh interpreter

    python benchmarks/bench_portcore.py [--seconds 60]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def kernel_bench(PortCore, seconds: float) -> tuple[float, int]:
    rate = 100_000_000
    horizon = int(seconds * 1e9)
    rng = np.random.default_rng(1)
    gap = (1538 * 8 * 1e9 / rate) / 0.9
    arr = np.cumsum(rng.exponential(gap, int(horizon / gap * 1.1) + 10)).astype(np.int64)
    k = PortCore(rate, 256)
    k.set_background(0, 1518)
    k.feed(arr, int(arr[-1]))
    t0 = time.perf_counter()
    for i, t in enumerate(range(0, horizon, 1_000_000)):
        k.advance(t)
        k.enqueue(i, 300, 7)
        k.advance(t)
        k.next_fg_start(int(arr[-1]))
    k.advance(horizon)
    return time.perf_counter() - t0, sum(k.started)


def scenario_bench(pure: bool, seconds: float) -> float:
    env = dict(os.environ)
    env.pop("ROBOTSYNC_PURE_PYTHON", None)
    if pure:
        env["ROBOTSYNC_PURE_PYTHON"] = "1"
    code = ("import time; from robotsync import scenario, runner, netsim; "
            f"sc = scenario.load('congestion-90', duration={seconds}); t = time.perf_counter(); "
            "runner.simulate(sc); print(netsim.KERNEL, time.perf_counter() - t)")
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True, capture_output=True, text=True)
    kernel, elapsed = out.stdout.split()
    expected = "python" if pure else "cython"
    if kernel != expected:
        raise SystemExit(f"expected the {expected} kernel, interpreter picked {kernel}")
    return float(elapsed)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seconds", type=float, default=60.0, help="simulated seconds per measurement")
    args = ap.parse_args()

    from robotsync.netsim._portcore_py import PortCore as PyCore
    try:
        from robotsync.netsim._portcore import PortCore as CyCore
    except ImportError:
        raise SystemExit("compiled kernel not built; run pip install -e . --no-build-isolation") from None

    print(f"{'measurement':24s} {'cython s':>10s} {'python s':>10s} {'speedup':>8s}")
    (tc, nc), (tp, np_) = kernel_bench(CyCore, args.seconds), kernel_bench(PyCore, args.seconds)
    if nc != np_:
        raise SystemExit(f"kernels disagree: {nc} vs {np_} frames started")
    print(f"{'kernel (' + str(nc) + ' frames)':24s} {tc:10.3f} {tp:10.3f} {tp / tc:7.1f}x")
    sc, sp = scenario_bench(False, args.seconds), scenario_bench(True, args.seconds)
    print(f"{'congestion-90 run':24s} {sc:10.3f} {sp:10.3f} {sp / sc:7.1f}x")


if __name__ == "__main__":
    main()
