"""Event queue: ordering, cancellation, clock discipline."""

import random

import pytest

from flashsim.engine import EventQueue, SimulationComplete
from flashsim.errors import SchedulingInPast


def test_pops_in_time_then_insertion_order():
    q = EventQueue()
    q.schedule("late", 50)
    q.schedule("tie-a", 10)
    q.schedule("tie-b", 10)
    q.schedule("early", 5)
    got = []
    while True:
        try:
            got.append(q.advance()[2])
        except SimulationComplete:
            break
    assert got == ["early", "tie-a", "tie-b", "late"]


def test_randomized_order_matches_sorted_schedule():
    rng = random.Random(1234)
    q = EventQueue()
    expect = []
    for i in range(5000):
        t = rng.randrange(0, 10000)
        q.schedule(i, t)
        expect.append((t, i))
    expect.sort()
    got = []
    while True:
        try:
            now, _, payload = q.advance()
        except SimulationComplete:
            break
        got.append((now, payload))
    assert got == expect


def test_cancel_suppresses_event_and_peek_skips_it():
    q = EventQueue()
    a = q.schedule("a", 10)
    q.schedule("b", 20)
    assert q.next_fire_at() == 10
    assert q.cancel(a) is True
    assert q.cancel(a) is False
    assert q.next_fire_at() == 20
    assert q.advance()[2] == "b"
    assert len(q) == 0


def test_clock_advances_and_rejects_past():
    q = EventQueue()
    q.schedule("x", 100)
    q.advance()
    assert q.now() == 100
    with pytest.raises(SchedulingInPast):
        q.schedule("y", 99)
    q.schedule("same-instant", 100)  # now itself is fine
    assert q.advance()[0] == 100


def test_interleaved_schedule_and_advance_stays_deterministic():
    logs = []
    for _ in range(2):
        q = EventQueue()
        r = random.Random(7)
        log = []
        q.schedule(0, 0)
        while len(log) < 4000:
            try:
                now, _, payload = q.advance()
            except SimulationComplete:
                break
            log.append((now, payload))
            for _ in range(r.randrange(3)):
                q.schedule(r.randrange(1000), now + 1 + r.randrange(50))
        logs.append(log)
    assert logs[0] == logs[1]
