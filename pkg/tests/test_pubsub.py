import pytest
from hypothesis import given
from hypothesis import strategies as st

from robotsync.clocks import DisciplinedClock, OscillatorModel
from robotsync.engine import Constant, Engine
from robotsync.netsim import Network, daisy_chain, wire_time
from robotsync.pubsub import (
    MS, Publisher, PublisherTask, StackModel, Subscriber, TraceRecord, default_subscribe_latency, next_fire,
    publish,
)

S = 1_000_000_000
EPOCH = 1_535_967_970_000_000_000
G = 1_000_000_000


def test_next_fire_examples():
    rel = PublisherTask("/t", "n", timer_mode="relative")
    ab = PublisherTask("/t", "n", timer_mode="absolute")
    assert next_fire(rel, 1_234_567) == 101_234_567
    assert next_fire(ab, 1_234_567) == 100 * MS
    assert next_fire(ab, 200 * MS) == 300 * MS
    assert next_fire(ab, EPOCH + 50 * MS) == EPOCH + 100 * MS


@given(st.integers(0, 10**18), st.integers(1, 10**9))
def test_absolute_next_fire_is_next_multiple(finished, period):
    t = next_fire(PublisherTask("/t", "n", period=period), finished)
    assert t % period == 0 and finished < t <= finished + period


def test_task_validation():
    with pytest.raises(ValueError):
        PublisherTask("/t", "n", period=0)
    with pytest.raises(ValueError):
        PublisherTask("/t", "n", timer_mode="oneshot")
    with pytest.raises(ValueError):
        PublisherTask("/t", "n", message_size=2000)


ZERO = StackModel(Constant(0), Constant(0), Constant(0))


def _system(tasks, stack=ZERO, clocks=None, chain=("c", "p")):
    eng = Engine(seed=3)
    net = Network(eng, daisy_chain(list(chain), G, 500))
    clocks = clocks or {n: DisciplinedClock(epoch=EPOCH) for n in chain}
    sub = Subscriber(eng, "c", clocks["c"], stack, eng.rng, epoch=EPOCH)
    net.attach("c", sub.deliver)
    pubs = [Publisher(eng, net, t, clocks[t.node], stack, eng.rng, dst="c", epoch=EPOCH) for t in tasks]
    for p in pubs:
        p.start()
    return eng, pubs, sub


def test_zero_latency_stamp_is_the_fire_instant():
    eng, pubs, sub = _system([PublisherTask("/a", "p", exec_time=Constant(0))])
    eng.run_until(2 * S)
    stamps = [m.header_stamp for m in pubs[0].published.values()]
    assert stamps == [EPOCH + k * 100 * MS for k in range(1, 21)]


def test_relative_timer_slips_by_execution_time():
    eng, pubs, _ = _system([PublisherTask("/a", "p", timer_mode="relative", exec_time=Constant(MS))])
    eng.run_until(5 * S)
    stamps = [m.header_stamp for m in pubs[0].published.values()]
    assert {b - a for a, b in zip(stamps, stamps[1:])} == {101 * MS}


def test_absolute_timer_with_drift_keeps_local_grid():
    clocks = {"c": DisciplinedClock(epoch=EPOCH), "p": DisciplinedClock(OscillatorModel(0, 50.0), epoch=EPOCH)}
    eng, pubs, _ = _system([PublisherTask("/a", "p", exec_time=Constant(0))], clocks=clocks)
    eng.run_until(10 * S)
    msgs = list(pubs[0].published.values())
    # wake-ups happen on whole true nanoseconds, so the reading may be one tick past the grid
    assert all(m.header_stamp % (100 * MS) <= 1 for m in msgs)
    # on the true time line the grid is stretched by the oscillator rate
    true_gaps = {b.true_send - a.true_send for a, b in zip(msgs, msgs[1:])}
    assert max(abs(g - 100 * MS / (1 + 50e-6)) for g in true_gaps) <= 1


def test_three_publishers_ten_minutes():
    tasks = [PublisherTask(f"/m{i}", "p", exec_time=Constant(0)) for i in range(3)]
    eng, pubs, sub = _system(tasks)
    eng.run_until(600 * S)
    # 100 ms grid on (0, 600 s]; the three published at the final instant are still in flight
    assert sum(p.seq for p in pubs) == 18_000
    assert len(sub.records) == 18_000 - 3


def test_end_to_end_latency_is_sum_of_stages():
    stack = StackModel(Constant(150_000), Constant(1_100_000), Constant(0))
    eng, pubs, sub = _system([PublisherTask("/a", "p", exec_time=Constant(0), message_size=256)], stack=stack)
    eng.run_until(S)
    net = wire_time(256 + 18, G) + 500
    assert {r.true_recv - r.true_send for r in sub.records} == {150_000 + net + 1_100_000}
    # identical ideal clocks: the stamp difference equals the true latency
    assert all(r.t_sub - r.t_pub == r.true_recv - r.true_send for r in sub.records)


def test_unsynchronized_offset_appears_in_stamp_difference():
    clocks = {"c": DisciplinedClock(epoch=EPOCH),
              "p": DisciplinedClock(OscillatorModel(initial_offset_ns=-2_000_000), epoch=EPOCH)}
    eng, pubs, sub = _system([PublisherTask("/a", "p", exec_time=Constant(0))], clocks=clocks)
    eng.run_until(S)
    for r in sub.records:
        assert (r.t_sub - r.t_pub) - (r.true_recv - r.true_send) == 2_000_000


def test_manual_publish_and_csv_row():
    eng, pubs, sub = _system([PublisherTask("/a", "p")])
    publish(pubs[0])
    assert pubs[0].seq == 1
    r = TraceRecord("/a", 3, 10, None, 9, None, True)
    assert r.csv_row() == ["/a", 3, 10, "", 9, "", 1]
    assert TraceRecord.CSV_HEADER == ("topic", "seq", "t_pub_ns", "t_sub_ns", "true_send_ns", "true_recv_ns",
                                      "dropped")


def test_default_subscribe_latency_shape():
    d = default_subscribe_latency()
    assert d.cap == pytest.approx(1_600_000)
    assert d.sample(0.5) == pytest.approx(1_100_000)
