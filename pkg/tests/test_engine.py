import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robotsync.engine import (
    Constant, Engine, InvariantViolation, LogNormal, Normal, RngFactory, RngStream, SchedulingError,
    Uniform, draw, parse_distribution,
)

# first five uniform(0,1) draws of stream "golden" under seed 0xC0B07, frozen
GOLDEN_UNIFORM = [0.03765928734743362, 0.18205665884647992, 0.7731591851382904,
                  0.9704988096606301, 0.7180760398306731]


def test_schedule_now_fires_next():
    eng = Engine()
    fired = []
    eng.schedule(0, lambda ev: fired.append(ev.fire_at), "x")
    assert eng.run_until(0) == 1
    assert fired == [0]


def test_equal_times_fire_in_sequence_order():
    eng = Engine()
    order = []
    a = eng.schedule(5, lambda ev: order.append("a"), "x")
    b = eng.schedule(5, lambda ev: order.append("b"), "x")
    assert a.sequence < b.sequence
    eng.run_until(10)
    assert order == ["a", "b"]


def test_schedule_in_past_fails():
    eng = Engine()
    eng.run_until(100)
    with pytest.raises(SchedulingError):
        eng.schedule(99, lambda ev: None, "x")


def test_empty_run_advances_time():
    eng = Engine()
    assert eng.run_until(600 * 10**9) == 0
    assert eng.now == 600 * 10**9


def test_run_until_rejects_going_back():
    eng = Engine()
    eng.run_until(10)
    with pytest.raises(SchedulingError):
        eng.run_until(5)


def test_cancel_semantics():
    eng = Engine()
    fired = []
    ev = eng.schedule(10, lambda e: fired.append(1), "x")
    assert eng.cancel(ev) == "cancelled"
    assert eng.cancel(ev) == "already cancelled"
    eng.run_until(20)
    assert fired == []
    ev2 = eng.schedule(30, lambda e: fired.append(2), "x")
    eng.run_until(30)
    assert eng.cancel(ev2) == "already fired"
    assert fired == [2]


def test_events_scheduled_from_handlers_keep_order():
    eng = Engine(record_log=True)

    def chain(ev):
        if ev.fire_at < 50:
            eng.schedule(ev.fire_at + 10, chain, "chain")
            eng.schedule(ev.fire_at + 10, lambda e: None, "side")

    eng.schedule(0, chain, "chain")
    eng.run_until(100)
    times = [t for t, _, _ in eng.log]
    assert times == sorted(times)
    seqs_at_10 = [s for t, s, _ in eng.log if t == 10]
    assert seqs_at_10 == sorted(seqs_at_10)


def test_out_of_order_pop_is_an_invariant_violation():
    eng = Engine()
    eng.schedule(10, lambda ev: None, "x")
    eng.run_until(10)
    # corrupt the queue behind the engine's back
    eng._last_fired = 50
    eng.schedule(20, lambda ev: None, "x")
    with pytest.raises(InvariantViolation) as exc:
        eng.run_until(30)
    assert exc.value.name == "event-order"


def test_golden_uniform_sequence():
    s = RngStream(0xC0B07, "golden")
    assert [s.draw(Uniform(0.0, 1.0)) for _ in range(5)] == GOLDEN_UNIFORM


def test_streams_are_independent_of_interleaving():
    f1 = RngFactory(7)
    a = [f1.stream("a").uniform() for _ in range(20)]
    f2 = RngFactory(7)
    mixed = []
    for _ in range(20):
        mixed.append(f2.stream("a").uniform())
        f2.stream("b").uniform()
    assert a == mixed
    assert RngFactory(7).stream("a") is not RngFactory(7).stream("a")
    assert f1.stream("a") is f1.stream("a")


def test_block_draws_match_scalar_draws():
    s1, s2 = RngStream(3, "x"), RngStream(3, "x")
    block = s1.uniforms(1000)
    assert [s2.uniform() for _ in range(1000)] == block.tolist()


def test_degenerate_distributions():
    s = RngStream(1, "d")
    assert draw(s, Constant(42)) == 42
    assert draw(s, Normal(0, 0)) == 0


def test_normal_truncated_at_four_sigma():
    s = RngStream(1, "n")
    xs = [s.draw(Normal(10.0, 2.0)) for _ in range(20000)]
    assert min(xs) >= 10 - 8 and max(xs) <= 10 + 8


def test_lognormal_from_median():
    d = LogNormal.from_median(150e3, 400e3)
    s = RngStream(2, "ln")
    xs = sorted(s.draw(d) for _ in range(20001))
    assert max(xs) <= 400e3
    assert xs[10000] == pytest.approx(150e3, rel=0.03)
    # sigma = ln(p999/median) / z_0.999
    assert d.sigma == pytest.approx(math.log(400 / 150) / 3.090232306167813, rel=1e-12)


@pytest.mark.parametrize("spec", [
    {"kind": "normal", "mu": 0, "sigma": -1},
    {"kind": "uniform", "low": 2, "high": 1},
    {"kind": "gamma", "k": 1},
    {"kind": "constant"},
    "fast",
    True,
])
def test_invalid_distributions_rejected(spec):
    with pytest.raises(ValueError):
        parse_distribution(spec)


def test_parse_number_and_median_form():
    assert parse_distribution(5) == Constant(5.0)
    d = parse_distribution({"kind": "lognormal", "median": 10, "p999": 20})
    assert d == LogNormal.from_median(10, 20)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=60))
def test_processed_times_non_decreasing(times):
    eng = Engine(record_log=True)
    for t in times:
        eng.schedule(t, lambda ev: None, "x")
    assert eng.run_until(10**6) == len(times)
    seen = [(t, s) for t, s, _ in eng.log]
    assert seen == sorted(seen)
