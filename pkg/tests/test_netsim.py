import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robotsync.engine import Engine, RngStream
from robotsync.netsim import (
    Frame, GateControlList, GateEntry, Network, TrafficGenerator, daisy_chain, run_generator, wire_time,
)
from robotsync.netsim.network import MAX_PAYLOAD

G = 1_000_000_000
M100 = 100_000_000
INF = 2**62


def test_wire_time_examples():
    # (frame + preamble/IPG) * 8 bits at the line rate, rounded up
    assert wire_time(1518, G) == 12_304
    assert wire_time(64, M100) == 6_720
    assert wire_time(90, G) == 880
    assert wire_time(64, 3) == -(-84 * 8 * 10**9 // 3)


def _fed(K, rate=G, cap=256, arrivals=(), horizon=INF // 2, pcp=0, size=1518):
    k = K(rate, cap)
    k.set_background(pcp, size)
    k.feed(np.asarray(arrivals, dtype=np.int64), horizon)
    return k


def test_idle_port_starts_immediately(PortCore):
    k = _fed(PortCore)
    assert k.enqueue(1, 100, 0)
    assert k.advance(0) == [(1, 0, wire_time(100, G))]


def test_strict_priority(PortCore):
    k = _fed(PortCore)
    k.enqueue(0, 1518, 0)
    k.advance(0)
    k.enqueue(1, 100, 0)
    k.enqueue(2, 100, 7)
    out = k.advance(10**6)
    assert [fid for fid, _, _ in out] == [2, 1]
    # the frame already on the wire is never preempted
    assert out[0][1] == wire_time(1518, G)


def test_gate_holds_frame_until_window(PortCore):
    k = _fed(PortCore, rate=M100)
    w = [[(0, 1_000_000)] for _ in range(8)]
    w[5] = [(500_000, 550_000)]  # 50 us window
    k.set_gate(1_000_000, w)
    k.enqueue(1, 64, 5)
    assert k.advance(0) == []
    assert k.next_fg_start(10**7) == 500_000
    assert k.advance(600_000) == [(1, 500_000, 500_000 + wire_time(64, M100))]


def test_frame_longer_than_window_never_starts(PortCore):
    k = _fed(PortCore, rate=M100)
    assert wire_time(1518, M100) > 50_000
    w = [[] for _ in range(8)]
    w[5] = [(0, 50_000)]
    k.set_gate(1_000_000, w)
    k.enqueue(1, 1518, 5)
    assert k.advance(10**7) == []
    assert k.next_fg_start(10**7) == -1


def test_gate_shift_moves_windows(PortCore):
    k = _fed(PortCore)
    w = [[(0, 100_000)] for _ in range(8)]
    k.set_gate(1_000_000, w)
    k.set_gate_shift(300_000)  # local time runs 300 us ahead of the port's time base
    k.enqueue(1, 64, 0)
    assert k.advance(2_000_000)[0][1] == 700_000


def test_queue_overflow_drops(PortCore):
    k = _fed(PortCore, cap=2)
    results = [k.enqueue(i, 1518, 0) for i in range(4)]
    assert results == [True, True, False, False]
    k.advance(0)
    assert k.enqueue(9, 1518, 0)


def test_background_counters(PortCore):
    arr = np.arange(0, 1_000_000, 10_000)
    k = _fed(PortCore, arrivals=arr, horizon=2_000_000)
    k.advance(2_000_000)
    assert k.bg_arrived[0] == 100
    assert k.started[0] == 100
    assert k.busy_ns == 100 * wire_time(1518, G)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.booleans())
def test_kernels_agree(both_kernels, seed, gated):
    P, C = both_kernels

    def run(K):
        rng = np.random.default_rng(seed)
        arr = np.cumsum(rng.exponential(136_000, 600)).astype(np.int64)
        k = K(M100, 8)
        k.set_background(0, 1518)
        k.feed(arr, int(arr[-1]))
        if gated:
            w = [[(0, 10_000_000)] for _ in range(8)]
            w[5] = [(0, 200_000)]
            w[0] = [(200_000, 9_000_000)]
            k.set_gate(10_000_000, w)
            k.set_gate_shift(int(rng.integers(0, 10**7)))
        t, out = 0, []
        for i in range(80):
            t += int(rng.integers(0, 900_000))
            if t > arr[-1]:
                break
            out += k.advance(t)
            k.enqueue(i, int(rng.choice([64, 300, 1518])), int(rng.choice([0, 5, 7])))
            out += k.advance(t)
            out.append(k.next_fg_start(int(arr[-1])))
        return out, list(k.bg_arrived), list(k.bg_dropped), list(k.started), k.gate_violations, k.busy_ns

    assert run(P) == run(C)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 50_000_000))
def test_interference_bound(PortCore, seed, at):
    # a top-priority frame waits at most one maximum-size frame already on the wire
    rng = np.random.default_rng(seed)
    arr = np.cumsum(rng.exponential(wire_time(1518, M100) / 0.95, 2000)).astype(np.int64)
    k = _fed(PortCore, rate=M100, arrivals=arr, horizon=int(arr[-1]))
    at = min(at, int(arr[-1]) - 10**6)
    k.advance(at)
    k.enqueue(1, 90, 7)
    start = k.advance(at)
    if not start:
        start = k.advance(at + wire_time(1518, M100))
    assert start and start[0][1] - at <= wire_time(1518, M100)


def test_gcl_validation():
    e = lambda s, d, c=(0,): GateEntry(s, d, frozenset(c))
    with pytest.raises(ValueError):
        GateControlList(0)
    with pytest.raises(ValueError):
        GateControlList(100, [e(0, 60), e(50, 20)])
    with pytest.raises(ValueError):
        GateControlList(100, [e(90, 20)])
    with pytest.raises(ValueError):
        GateControlList(100, [e(0, 0)])
    with pytest.raises(ValueError):
        GateControlList(100, [e(0, 10, (8,))])


def test_gcl_windows_merge_and_admit():
    g = GateControlList(100, [GateEntry(50, 50, frozenset({0})), GateEntry(0, 50, frozenset({0, 5}))], 1000)
    assert g.windows(0) == [(0, 100)]
    assert g.windows(5) == [(0, 50)]
    assert g.admits(5, 1000, 50)
    assert not g.admits(5, 1010, 50)
    assert g.admits(0, 1090, 30)  # across the cycle boundary


def test_traffic_generator_load():
    gen = TrafficGenerator(0.5, 1500, "periodic")
    t = run_generator(gen, G, RngStream(0, "bg"), 10**9)
    expected = 10**9 / (wire_time(1518, G) / 0.5)
    assert abs(len(t) - expected) <= 1
    p = run_generator(TrafficGenerator(0.5, 1500, "poisson"), G, RngStream(0, "bg"), 10**9)
    assert abs(len(p) - expected) < 4 * expected**0.5
    assert np.all(np.diff(p) > 0)
    assert len(run_generator(TrafficGenerator(0.0), G, RngStream(0, "bg"), 10**9)) == 0
    with pytest.raises(ValueError):
        TrafficGenerator(1.5)


def _net(chain, **kw):
    eng = Engine()
    return eng, Network(eng, daisy_chain(chain, G, 500), **kw)


def test_three_hop_delivery_time():
    eng, net = _net(["a", "b", "c", "d"])
    got = []
    net.attach("d", lambda f, now: got.append(now))
    net.send(Frame("a", "d", 100, 0, "topic"))
    eng.run_until(10**6)
    # store and forward: serialization plus propagation on every hop
    assert got == [3 * (wire_time(100, G) + 500)]


def test_loopback_is_immediate():
    eng, net = _net(["a", "b"])
    got = []
    net.attach("a", lambda f, now: got.append(now))
    eng.run_until(77)
    net.send(Frame("a", "a", 64, 0, "topic"))
    eng.run_until(100)
    assert got == [77]


def test_network_drops_and_accounting():
    eng, net = _net(["a", "b"], queue_capacity=2)
    dropped = []
    for _ in range(5):
        f = Frame("a", "b", 1518, 0, "topic")
        f.on_drop = lambda fr, node: dropped.append(node)
        net.send(f)
    eng.run_until(10**6)
    stats = net.finalize(10**6)
    assert dropped == ["a", "a"]
    assert stats["frames"]["topic/pcp0"] == {"sent": 5, "delivered": 3, "dropped": 2, "in_flight": 0}


def test_frame_size_validation():
    with pytest.raises(ValueError):
        Frame("a", "b", 63, 0, "topic")
    with pytest.raises(ValueError):
        Frame("a", "b", 1519, 0, "topic")
    with pytest.raises(ValueError):
        Frame("a", "b", 100, 8, "topic")
    assert Frame.for_payload(10, src="a", dst="b", pcp=0, kind="topic").size == 64
    with pytest.raises(ValueError):
        Frame.for_payload(MAX_PAYLOAD + 1, src="a", dst="b", pcp=0, kind="topic")


def test_disconnected_topology_rejected():
    from robotsync.netsim import Link, Topology
    with pytest.raises(ValueError):
        Topology({"a": "endpoint", "b": "endpoint", "c": "endpoint"}, [Link("a", "b", G, 0)])


def test_full_run_identical_under_both_kernels(tmp_path, both_kernels):
    outs = []
    for pure in ("", "1"):
        out = tmp_path / f"k{pure or 'c'}"
        env = dict(os.environ, ROBOTSYNC_PURE_PYTHON=pure)
        if not pure:
            env.pop("ROBOTSYNC_PURE_PYTHON")
        subprocess.run([sys.executable, "-m", "robotsync.cli", "run", "congestion-90", "--duration", "5",
                        "--out", str(out)], check=True, env=env, capture_output=True)
        outs.append((out / "trace.csv").read_bytes() + (out / "ptp_offsets.csv").read_bytes())
    assert outs[0] == outs[1]
