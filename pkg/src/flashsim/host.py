"""Host OS layer between workload threads and the SSD.

Threads talk to the OS in messages. SUBMIT_IO and TRIM enter the thread's
pending pool; the OS forwards pooled IOs to the device under a scheduling
policy while keeping at most queue_depth outstanding. TAG_* messages ride
out-of-band at zero simulated cost — with the open interface disabled they
are silently dropped, so a tagged run degrades to exactly the untagged one.

Completions come back as interrupts: the owning thread's call_back runs in
the same virtual instant and may submit more messages, which are eligible
for forwarding immediately (work conservation inside one instant).
"""

import logging

from .errors import ModelViolation
from .mapping import COLD, HOT

log = logging.getLogger("flashsim.host")

SUBMIT_IO = "SUBMIT_IO"
TRIM = "TRIM"
TAG_PRIORITY = "TAG_PRIORITY"
TAG_TEMPERATURE = "TAG_TEMPERATURE"
TAG_LOCALITY = "TAG_LOCALITY"


class Message:
    """Envelope for everything a thread sends to the OS."""

    __slots__ = ("kind", "io_kind", "lpn", "deadline", "io_id", "priority",
                 "lo", "hi", "temp", "group", "lpns")

    def __init__(self, kind, io_kind=None, lpn=None, deadline=None,
                 io_id=None, priority=None, lo=None, hi=None, temp=None,
                 group=None, lpns=None):
        self.kind = kind
        self.io_kind = io_kind
        self.lpn = lpn
        self.deadline = deadline
        self.io_id = io_id
        self.priority = priority
        self.lo = lo
        self.hi = hi
        self.temp = temp
        self.group = group
        self.lpns = lpns


def submit_read(lpn, deadline=None):
    return Message(SUBMIT_IO, io_kind="READ", lpn=lpn, deadline=deadline)


def submit_write(lpn, deadline=None):
    return Message(SUBMIT_IO, io_kind="WRITE", lpn=lpn, deadline=deadline)


def trim(lpn):
    return Message(TRIM, lpn=lpn)


def tag_priority(io_id, priority):
    """io_id None tags the IO submitted immediately before this message."""
    return Message(TAG_PRIORITY, io_id=io_id, priority=priority)


def tag_temperature(lo, hi, temp):
    return Message(TAG_TEMPERATURE, lo=lo, hi=hi, temp=temp)


def tag_locality(group, lpns):
    return Message(TAG_LOCALITY, group=group, lpns=tuple(lpns))


class WorkloadThread:
    """Extend this and define init() and call_back().

    Both receive a ThreadCtx and return a list of Messages to submit.
    call_back fires once per completed (or failed) IO belonging to the
    thread. Call ctx.finish() when no more submissions will follow; the
    thread reaches DONE once its outstanding IOs drain.
    """

    def init(self, ctx):
        return []

    def call_back(self, ctx, io):
        return []


class ThreadCtx:
    """Per-thread view handed to init/call_back."""

    __slots__ = ("tid", "rng", "logical_pages", "_state", "_os")

    def __init__(self, tid, rng, logical_pages, state, host):
        self.tid = tid
        self.rng = rng
        self.logical_pages = logical_pages
        self._state = state
        self._os = host

    def now(self):
        return self._os.engine.now()

    def finish(self):
        self._state.finished = True


class ThreadState:
    __slots__ = ("tid", "obj", "ctx", "pool", "depends_on", "state",
                 "finished", "inflight", "measured")

    WAITING = "WAITING"
    RUNNING = "RUNNING"
    DONE = "DONE"

    def __init__(self, tid, obj, depends_on, measured):
        self.tid = tid
        self.obj = obj
        self.ctx = None
        self.pool = []          # submitted, not yet forwarded
        self.depends_on = set(depends_on)
        self.state = self.WAITING
        self.finished = False
        self.inflight = 0
        self.measured = measured


class HostOs:
    def __init__(self, engine, sched, queue_depth, policy, open_interface,
                 logical_pages, seed_rng):
        self.engine = engine
        self.sched = sched
        self.queue_depth = queue_depth
        self.policy = policy
        self.open_interface = open_interface
        self.logical_pages = logical_pages
        self.seed_rng = seed_rng   # tid -> random.Random factory
        self.threads = {}
        self.order = []            # registration order, drives fair share
        self.rr = 0
        self.outstanding = 0
        self.handlers = {
            SUBMIT_IO: self._on_submit_io,
            TRIM: self._on_trim,
            TAG_PRIORITY: self._on_tag_priority,
            TAG_TEMPERATURE: self._on_tag_temperature,
            TAG_LOCALITY: self._on_tag_locality,
        }
        sched.on_app_complete = self.on_interrupt

    def register_message(self, kind, handler):
        """Extension point: handler(thread_state, message, now)."""
        self.handlers[kind] = handler

    def add_thread(self, tid, obj, depends_on=(), measured=True):
        if tid in self.threads:
            raise ModelViolation(f"duplicate thread id {tid}")
        ts = ThreadState(tid, obj, depends_on, measured)
        ts.ctx = ThreadCtx(tid, self.seed_rng(tid), self.logical_pages,
                           ts, self)
        self.threads[tid] = ts
        self.order.append(tid)
        return ts

    # ---- lifecycle -------------------------------------------------------

    def start(self, now):
        for tid in self.order:
            self._maybe_init(self.threads[tid], now)

    def _deps_done(self, ts):
        return all(self.threads[d].state == ThreadState.DONE
                   for d in ts.depends_on)

    def _maybe_init(self, ts, now):
        if ts.state != ThreadState.WAITING or not self._deps_done(ts):
            return
        ts.state = ThreadState.RUNNING
        msgs = ts.obj.init(ts.ctx)
        self.handle_messages(ts, msgs or (), now)
        self._maybe_done(ts, now)

    def _maybe_done(self, ts, now):
        if (ts.state == ThreadState.RUNNING and ts.finished
                and not ts.pool and ts.inflight == 0):
            ts.state = ThreadState.DONE
            for tid in self.order:
                self._maybe_init(self.threads[tid], now)

    # ---- message handling --------------------------------------------------

    def handle_messages(self, ts, msgs, now):
        last_io = None
        for msg in msgs:
            handler = self.handlers.get(msg.kind)
            if handler is None:
                raise ModelViolation(f"unknown message kind {msg.kind}")
            if msg.kind == SUBMIT_IO:
                last_io = handler(ts, msg, now)
            elif msg.kind == TAG_PRIORITY and msg.io_id is None \
                    and last_io is not None:
                if self.open_interface:
                    self._apply_priority(last_io, msg.priority)
            else:
                handler(ts, msg, now)

    def _on_submit_io(self, ts, msg, now):
        if ts.state == ThreadState.DONE:
            raise ModelViolation(f"thread {ts.tid} submitted after DONE")
        io = self.sched.new_io(f"APP:{ts.tid}", msg.io_kind, lpn=msg.lpn,
                               now=now, thread=ts.tid,
                               deadline=(now + msg.deadline
                                         if msg.deadline else None))
        ts.pool.append(io)
        return io

    def _on_trim(self, ts, msg, now):
        if ts.state == ThreadState.DONE:
            raise ModelViolation(f"thread {ts.tid} submitted after DONE")
        io = self.sched.new_io(f"APP:{ts.tid}", "TRIM", lpn=msg.lpn,
                               now=now, thread=ts.tid)
        ts.pool.append(io)
        return io

    def _apply_priority(self, io, priority):
        if io.os_dispatched is not None:
            log.warning("stale priority tag for io %d: already dispatched",
                        io.id)
            return
        io.priority = priority

    def _on_tag_priority(self, ts, msg, now):
        if not self.open_interface:
            return
        for io in ts.pool:
            if io.id == msg.io_id:
                self._apply_priority(io, msg.priority)
                return
        log.warning("stale priority tag for io %s: not pending", msg.io_id)

    def _on_tag_temperature(self, ts, msg, now):
        if not self.open_interface:
            return
        temp = HOT if str(msg.temp).upper() in ("HOT", "1") else COLD
        self.sched.set_temp_hint(msg.lo, msg.hi, temp)

    def _on_tag_locality(self, ts, msg, now):
        if not self.open_interface:
            return
        self.sched.set_locality(msg.group, msg.lpns)

    # ---- forwarding ------------------------------------------------------

    def _pick_fifo(self):
        best = None
        for tid in self.order:
            pool = self.threads[tid].pool
            if pool and (best is None or pool[0].id < best.pool[0].id):
                best = self.threads[tid]
        return best

    def _pick_priority(self):
        best = None
        best_key = None
        for tid in self.order:
            pool = self.threads[tid].pool
            if not pool:
                continue
            head = pool[0]
            key = (-head.priority, head.id)
            if best is None or key < best_key:
                best, best_key = self.threads[tid], key
        return best

    def _pick_fair(self):
        n = len(self.order)
        for off in range(n):
            ts = self.threads[self.order[(self.rr + off) % n]]
            if ts.pool:
                self.rr = (self.rr + off + 1) % n
                return ts
        return None

    def os_dispatch(self, now):
        while self.outstanding < self.queue_depth:
            if self.policy == "priority":
                ts = self._pick_priority()
            elif self.policy == "fair_share":
                ts = self._pick_fair()
            else:
                ts = self._pick_fifo()
            if ts is None:
                return
            io = ts.pool.pop(0)
            io.os_dispatched = now
            self.outstanding += 1
            ts.inflight += 1
            self.sched.admit(io, now)

    # ---- interrupts --------------------------------------------------------

    def on_interrupt(self, io, now):
        ts = self.threads.get(io.thread)
        if ts is None:
            raise ModelViolation(f"interrupt for unknown io {io.id}")
        self.outstanding -= 1
        ts.inflight -= 1
        msgs = ts.obj.call_back(ts.ctx, io)
        self.handle_messages(ts, msgs or (), now)
        self._maybe_done(ts, now)
        self.os_dispatch(now)

    # ---- state queries -----------------------------------------------------

    def all_done(self):
        return all(ts.state == ThreadState.DONE
                   for ts in self.threads.values())

    def idle(self):
        return self.outstanding == 0 and all(
            not ts.pool for ts in self.threads.values())
