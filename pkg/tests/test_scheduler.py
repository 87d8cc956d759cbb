"""Scheduler: rank keys, dispatch discipline, drops, retries."""

import pytest

import flashsim.config as cfgmod
import flashsim.mapping as mp
import flashsim.scheduler as sc
from flashsim.engine import EventQueue
from flashsim.errors import ModelViolation

from helpers import fill_block, small_array


def make_sched(greedy=True, **ctl_over):
    arr = small_array()
    eng = EventQueue()
    pm = mp.PageTableMap(arr.geo, 768, ram_bytes=1 << 20)
    alloc = mp.BlockAllocator(arr)
    knobs = dict(cfgmod.default_config()["controller"])
    knobs["greedy_lookahead"] = greedy
    knobs.update(ctl_over)
    s = sc.SsdScheduler(eng, arr, pm, alloc, sc.SchedulerConfig(knobs))
    return s, arr, pm, eng


def pump(s, eng):
    """Drive the event loop the way the simulation does: drain every
    event at an instant, then one dispatch and retry-arm pass."""
    while len(eng):
        now, _, ev = eng.advance()
        while True:
            if isinstance(ev, sc.IoRequest):
                s.complete(ev, now)
            elif ev[0] == "retry":
                s.retry_fired()
            if eng.next_fire_at() != now:
                break
            _, _, ev = eng.advance()
        s.dispatch(now)
        s.arm_retry(now)


def test_rank_keys_and_class_heads():
    s, arr, pm, eng = make_sched(greedy=False)
    t0 = fill_block(arr, pm, 0, range(16), 0)

    io6 = s.new_io("MAPPING", "READ", tidx=0, now=0)
    io3 = s.new_io("APP:a", "READ", lpn=0, now=0, priority=3)
    io2 = s.new_io("APP:a", "READ", lpn=1, now=0)
    io1 = s.new_io("APP:a", "WRITE", lpn=100, now=0)
    io5 = s.new_io("GC", "READ", lpn=1, src_ppa=1, ppa=1, now=0)
    io4 = s.new_io("WL", "WRITE", lpn=2, src_ppa=2, stream=mp.COLD, now=0,
                   deadline=50)
    for io in (io1, io2, io3, io4, io5, io6):
        s.admit(io, now=0)

    # descending effective priority, reads over writes, then admit order
    assert s.pending == [io3, io6, io2, io1, io5, io4]
    assert [io.skey[0] for io in s.pending] == [-5, -3, -2, -2, -1, 0]
    assert s.pending[2].skey[1] is False and s.pending[3].skey[1] is True
    assert s._candidates(0) == [io3, io6, io5, io4]
    # once io4's deadline lapses it jumps every class
    assert s._candidates(100)[0] is io4
    assert s._candidates(50)[0] is io3

    # the key freezes at admit time: a later enqueue sorts later even at
    # equal priority
    late = s.new_io("APP:a", "READ", lpn=2, now=0)
    s.admit(late, now=7)
    assert late.skey[2] == 7
    assert s.pending.index(late) == 3

    with pytest.raises(ModelViolation):
        s.admit(late, now=8)


def test_writes_rank_first_without_read_preference():
    s, arr, pm, eng = make_sched(greedy=False, reads_over_writes=False)
    fill_block(arr, pm, 0, range(4), 0)
    w = s.new_io("APP:a", "WRITE", lpn=50, now=0)
    r = s.new_io("APP:a", "READ", lpn=0, now=0)
    s.admit(w, now=0)
    s.admit(r, now=0)
    # same effective priority, no read boost: pure id order
    assert s.pending == [w, r]


@pytest.mark.parametrize("greedy", [False, True])
def test_dispatch_starts_best_ranked_per_channel(greedy):
    s, arr, pm, eng = make_sched(greedy=greedy)
    t = fill_block(arr, pm, 0, range(16), 0)          # LUN 0, channel 0
    t0 = fill_block(arr, pm, 32, range(16, 32), t)    # LUN 2, channel 1

    a = s.new_io("APP:a", "READ", lpn=1, now=t0)
    b = s.new_io("APP:a", "READ", lpn=2, now=t0, priority=5)
    c = s.new_io("APP:a", "READ", lpn=17, now=t0, priority=1)
    d = s.new_io("APP:a", "READ", lpn=18, now=t0, priority=7)
    for io in (a, b, c, d):
        s.admit(io, now=t0)
    s.dispatch(t0)

    # one read per channel, highest priority first; the rest wait
    assert d.exec_started == t0 and b.exec_started == t0
    assert a.exec_started is None and c.exec_started is None
    assert s.inflight == 2 and s.n_pending == 2

    s.arm_retry(t0)
    pump(s, eng)
    assert s.idle()
    assert all(io.ok and io.tag == io.lpn for io in (a, b, c, d))
    assert len(s.trace) == 4


def test_unmapped_read_fails_fast_without_trace_row():
    s, arr, pm, eng = make_sched()
    io = s.new_io("APP:a", "READ", lpn=5, now=0)
    s.admit(io, now=0)
    assert io.dropped and io.ok is False and io.completed == 0
    assert s.n_pending == 0 and s.idle()
    # the failure is delivered through the event queue, not recursion
    now, _, ev = eng.advance()
    assert now == 0 and ev == ("fail", io)
    assert s.trace == []


def test_stale_migration_drops_with_its_pair():
    s, arr, pm, eng = make_sched()
    t0 = fill_block(arr, pm, 0, range(16), 0)

    rd = s.new_io("GC", "READ", lpn=5, src_ppa=5, ppa=5, now=t0)
    pr = s.new_io("GC", "WRITE", lpn=5, src_ppa=5, force_lun=0,
                  stream=mp.GC_STREAM, now=t0, preds=(rd,))
    rd.paired = pr
    s.admit(rd, now=t0)
    s.admit(pr, now=t0)

    # an overwrite lands before the migration gets to run
    t1 = fill_block(arr, pm, 1, [5], t0)
    s.dispatch(t1)

    assert rd.dropped and pr.dropped
    assert s.trace == [] and s.idle()
    assert pm.current(5) == 16  # block 1, page 0


def test_trim_settles_mapping_at_admit():
    s, arr, pm, eng = make_sched()
    t0 = fill_block(arr, pm, 0, range(16), 0)

    tr = s.new_io("APP:a", "TRIM", lpn=3, now=t0)
    s.admit(tr, now=t0)
    assert pm.current(3) == mp.UNMAPPED
    assert arr.valid[3] == 0
    assert tr.ppa == 3  # remembers which page it freed

    # reads issued after the trim fail immediately
    r = s.new_io("APP:a", "READ", lpn=3, now=t0)
    s.admit(r, now=t0)
    assert r.dropped

    s.dispatch(t0)
    s.arm_retry(t0)
    pump(s, eng)
    assert tr.completed == t0 + 2000
    assert [row.kind for row in s.trace] == ["TRIM"]

    # trimming an address that was never written has no target page
    tr2 = s.new_io("APP:a", "TRIM", lpn=700, now=tr.completed)
    s.admit(tr2, now=tr.completed)
    s.dispatch(tr.completed)
    pump(s, eng)
    assert tr2.ppa is None and tr2.completed is not None


def test_retry_wakes_at_next_channel_release():
    s, arr, pm, eng = make_sched()
    w = [s.new_io("APP:a", "WRITE", lpn=200 + i, now=0) for i in range(3)]
    for io in w:
        s.admit(io, now=0)
    s.dispatch(0)

    # two channels, so two writes go; the third has nowhere to start
    assert w[0].exec_started == 0 and w[1].exec_started == 0
    assert w[2].exec_started is None

    # no completion lands at the channel release point, so a retry must
    s.arm_retry(0)
    assert s._retry_at == 102000
    pump(s, eng)
    assert w[2].exec_started == 102000
    assert s.idle() and len(s.trace) == 3


def test_retry_suppressed_when_completion_lands_first():
    s, arr, pm, eng = make_sched()
    t0 = fill_block(arr, pm, 0, range(16), 0)
    r1 = s.new_io("APP:a", "READ", lpn=0, now=t0)
    r2 = s.new_io("APP:a", "READ", lpn=1, now=t0)
    s.admit(r1, now=t0)
    s.admit(r2, now=t0)
    s.dispatch(t0)
    assert r1.exec_started == t0 and r2.exec_started is None

    # first wake is the command-phase boundary; after that probe fails,
    # the only boundary left coincides with r1's completion, so no new
    # retry event is armed
    s.arm_retry(t0)
    assert s._retry_at == t0 + 2000
    now, _, ev = eng.advance()
    assert (now, ev) == (t0 + 2000, ("retry",))
    s.retry_fired()
    s.dispatch(now)
    s.arm_retry(now)
    assert s._retry_at is None
    assert len(eng) == 1  # r1's completion is the only pending event

    pump(s, eng)
    # reads on one LUN serialize end to end
    assert r2.exec_started == t0 + 127000
    assert s.idle()


def mixed_batch(s, pm, now):
    """Reads, writes, migrations, and a trim with no cross-IO races, so
    every admitted IO must complete in any legal dispatch order."""
    ios = []
    for lpn in (0, 5, 9, 16, 21, 30):
        ios.append(s.new_io("APP:a", "READ", lpn=lpn, now=now))
    for lpn in (100, 101, 102, 103):
        ios.append(s.new_io("APP:a", "WRITE", lpn=lpn, now=now))
    for lpn in (10, 11):
        src = pm.current(lpn)
        rd = s.new_io("GC", "READ", lpn=lpn, src_ppa=src, ppa=src, now=now)
        pr = s.new_io("GC", "WRITE", lpn=lpn, src_ppa=src, force_lun=0,
                      stream=mp.GC_STREAM, now=now, preds=(rd,))
        rd.paired = pr
        ios.extend((rd, pr))
    src = pm.current(20)
    rd = s.new_io("WL", "READ", lpn=20, src_ppa=src, ppa=src, now=now)
    pr = s.new_io("WL", "WRITE", lpn=20, src_ppa=src, stream=mp.COLD,
                  now=now, preds=(rd,))
    rd.paired = pr
    ios.extend((rd, pr))
    ios.append(s.new_io("APP:a", "TRIM", lpn=3, now=now))
    for io in ios:
        s.admit(io, now=now)
    return ios


def run_mixed(greedy):
    s, arr, pm, eng = make_sched(greedy=greedy)
    t = fill_block(arr, pm, 0, range(16), 0)
    t0 = fill_block(arr, pm, 32, range(16, 32), t)
    ios = mixed_batch(s, pm, t0)
    s.dispatch(t0)
    s.arm_retry(t0)
    pump(s, eng)
    assert s.idle()
    return ios, s.trace


@pytest.mark.parametrize("greedy", [False, True])
def test_mixed_batch_is_conserved(greedy):
    ios, trace = run_mixed(greedy)
    assert sorted(io.id for io in trace) == [io.id for io in ios]
    assert all(io.ok for io in ios)
    # payload integrity: every read returned what the fill wrote there
    for io in trace:
        if io.kind == "READ":
            assert io.tag == io.lpn


def test_both_dispatch_modes_complete_the_same_work():
    ios_a, trace_a = run_mixed(greedy=True)
    ios_b, trace_b = run_mixed(greedy=False)
    assert [io.id for io in ios_a] == [io.id for io in ios_b]
    assert sorted(io.id for io in trace_a) == sorted(io.id for io in trace_b)


def test_same_mode_runs_are_identical():
    a = [(io.id, io.exec_started, io.completed) for io in run_mixed(True)[1]]
    b = [(io.id, io.exec_started, io.completed) for io in run_mixed(True)[1]]
    assert a == b
