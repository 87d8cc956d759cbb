"""SSD-internal IO scheduling: which pending IO executes next, and where.

One ranking key orders everything (descending): overdue flag, effective
priority (class base + per-IO), READ before WRITE when configured, then
FIFO by enqueue time and id. Dispatch repeatedly starts the best-ranked
IO whose resources are free right now; writes pick their physical page
at that moment, never earlier, so programs stay in page order.

IOs with predecessors sit in a blocked set until every predecessor has
completed (or been dropped as stale); erases reach the device only after
their whole migration batch has drained. Completed IOs append one trace
row each, in completion order; IOs dropped before dispatch leave no row.
"""

from bisect import insort
from heapq import heapify, heappop, heappush
from operator import attrgetter

from .errors import ModelViolation
from . import hardware as hw
from .mapping import UNMAPPED, COLD, HOT, GC_STREAM

_skey_of = attrgetter("skey")

_HW_KIND = {
    "READ": hw.READ,
    "WRITE": hw.PROGRAM,
    "ERASE": hw.ERASE,
    "COPYBACK": hw.COPYBACK,
    "TRIM": hw.TRIM,
}


class IoRequest:
    __slots__ = (
        "id", "source", "kind", "lpn", "tidx", "ppa", "src_ppa",
        "force_lun", "stream", "tag", "priority", "deadline",
        "created", "os_dispatched", "ssd_enqueued", "exec_started",
        "completed", "pred_ids", "n_preds", "successors", "paired",
        "gc_lun", "wl_block", "thread", "ok", "dropped", "cls", "skey",
    )

    def __init__(self, io_id, source, kind):
        self.id = io_id
        self.source = source
        self.kind = kind
        self.lpn = None
        self.tidx = None
        self.ppa = None
        self.src_ppa = None
        self.force_lun = None
        self.stream = None
        self.tag = None         # payload read back / written out
        self.priority = 0
        self.deadline = None
        self.created = None
        self.os_dispatched = None
        self.ssd_enqueued = None
        self.exec_started = None
        self.completed = None
        self.pred_ids = ()
        self.n_preds = 0
        self.successors = ()
        self.paired = None      # migration read -> its write
        self.gc_lun = None
        self.wl_block = None
        self.thread = None
        self.ok = True
        self.dropped = False
        self.cls = None
        self.skey = None        # rank key, frozen when first dispatchable


class SchedulerConfig:
    __slots__ = ("class_priority", "reads_over_writes", "deadline_boost",
                 "greedy_lookahead")

    def __init__(self, ctl):
        self.class_priority = {
            "MAPPING": ctl["priority_mapping"],
            "APP": ctl["priority_app"],
            "GC": ctl["priority_gc"],
            "WL": ctl["priority_wl"],
        }
        self.reads_over_writes = ctl["reads_over_writes"]
        self.deadline_boost = ctl["deadline_boost"]
        self.greedy_lookahead = ctl["greedy_lookahead"]


def _class_of(source):
    return "APP" if source.startswith("APP") else source


class SsdScheduler:
    """Pending set, ranking, dispatch, and completion effects.

    Collaborators (array, mapping, allocator, gc, wl, detector) are wired
    by the simulation. The engine is only touched through the `engine`
    handle for completion and retry events; OS notification goes through
    `on_app_complete`, set by the host layer.
    """

    def __init__(self, engine, array, mapping, alloc, cfg):
        self.engine = engine
        self.array = array
        self.mapping = mapping
        self.alloc = alloc
        self.cfg = cfg
        self.gc = None
        self.wl = None
        self.detector = None
        self.on_app_complete = None

        self.next_id = 0
        self.n_pending = 0
        # dispatchable IOs live in rank-sorted lists bucketed by the
        # resource they are pinned to, so a dispatch pass can skip whole
        # groups whose LUN is mid-command. IOs whose target can move
        # (host reads chase the mapping, translation reads chase the
        # directory) stay in _main, which is scanned every pass. Started
        # and dropped entries are pruned from the buckets lazily.
        self._main = []            # unpinned IOs plus erases and trims
        self._rlun = {}            # src LUN -> migration reads
        self._wlun = {}            # forced LUN -> pinned writes
        self._wstream = {}         # stream id -> unpinned stream writes
        self._n_bucketed = 0       # live entries across the three tables
        # without greedy lookahead dispatch wants one global rank order,
        # so a combined list is maintained as well for that mode
        self.pending = []
        self._track_global = not cfg.greedy_lookahead
        self.blocked = set()       # waiting on predecessors
        self.inflight = 0
        self.trace = []            # completed rows, completion order
        self.temp_hints = []       # (lo, hi, temp), newest wins
        self.locality = {}         # lpn -> group id
        self._retry_ev = None
        self._retry_at = None
        self._seen_ids = set()
        self._n_deadlines = 0      # pending IOs carrying a deadline
        self._n_reads = 0          # pending counts by kind, for scan cutoffs
        self._n_writes = 0
        self._n_cbs = 0
        self._n_trims = 0
        self._released = False     # a blocked IO entered pending mid-pass
        self._chan_used = set()    # channels that started a command at now
        self._read_blocked = set()  # channels where no read can start now
        self._lun_free = set()     # LUNs idle at the dispatch instant
        self._prog_dead = False    # no LUN can take a program this instant
        self._cb_dead = False      # same for copyback destinations
        self._startable_memo = {}  # probe kind -> (now, gen, luns)
        self._comp_at = {}         # completion instant -> inflight count
        self._ppl = array.geo.pages_per_lun
        self._lpc = array.geo.luns_per_channel

    # ---- construction helpers ------------------------------------------

    def new_io(self, source, kind, lpn=None, tidx=None, ppa=None,
               src_ppa=None, force_lun=None, stream=None, now=0,
               preds=(), priority=0, deadline=None, thread=None):
        io = IoRequest(self.next_id, source, kind)
        self.next_id += 1
        io.cls = _class_of(source)
        io.lpn = lpn
        io.tidx = tidx
        io.ppa = ppa
        io.src_ppa = src_ppa
        io.force_lun = force_lun
        io.stream = stream
        io.priority = priority
        io.deadline = deadline
        io.thread = thread
        io.created = now
        if preds:
            preds = [p for p in preds if p.completed is None and not p.dropped]
            io.pred_ids = tuple(p.id for p in preds)
            io.n_preds = len(preds)
            for p in preds:
                p.successors = tuple(p.successors) + (io,)
        return io

    # ---- enqueue ---------------------------------------------------------

    def admit(self, io, now=None):
        """Accept an IO into the pending set (ssd_enqueued timestamp)."""
        now = self.engine.now() if now is None else now
        if io.id in self._seen_ids:
            raise ModelViolation(f"duplicate enqueue of io {io.id}")
        self._seen_ids.add(io.id)
        io.ssd_enqueued = now

        if io.source.startswith("APP"):
            self._admit_app(io, now)
            if io.dropped:
                return
        # priority is final once enqueued, so the rank key (minus the
        # deadline-overdue flag, handled at dispatch) freezes here
        eff = self.cfg.class_priority[io.cls] + io.priority
        readish = self.cfg.reads_over_writes and io.kind == "READ"
        io.skey = (-eff, not readish, now, io.id)
        if io.n_preds > 0:
            self.blocked.add(io)
        else:
            self._to_pending(io)

    def _to_pending(self, io):
        self.n_pending += 1
        if self._track_global:
            insort(self.pending, io, key=_skey_of)
        if io.deadline is not None:
            self._n_deadlines += 1
        k = io.kind
        if k == "READ":
            self._n_reads += 1
            if io.src_ppa is not None:
                self._n_bucketed += 1
                self._bucket(self._rlun, io.src_ppa // self._ppl, io)
                return
        elif k == "WRITE" or k == "COPYBACK":
            if k == "WRITE":
                self._n_writes += 1
            else:
                self._n_cbs += 1
            if io.force_lun is not None:
                self._n_bucketed += 1
                self._bucket(self._wlun, io.force_lun, io)
                return
            if io.stream is not None:
                self._n_bucketed += 1
                self._bucket(self._wstream, io.stream, io)
                return
        elif k == "TRIM":
            self._n_trims += 1
        insort(self._main, io, key=_skey_of)

    @staticmethod
    def _bucket(table, key, io):
        b = table.get(key)
        if b is None:
            table[key] = [io]
        else:
            insort(b, io, key=_skey_of)

    def _from_pending(self, io):
        # bucket entries are cleaned up lazily during dispatch scans
        self.n_pending -= 1
        if self._track_global:
            self.pending.remove(io)
        if io.deadline is not None:
            self._n_deadlines -= 1
        k = io.kind
        if k == "READ":
            self._n_reads -= 1
            if io.src_ppa is not None:
                self._n_bucketed -= 1
        elif k == "WRITE":
            self._n_writes -= 1
            if io.force_lun is not None or io.stream is not None:
                self._n_bucketed -= 1
        elif k == "COPYBACK":
            self._n_cbs -= 1
            if io.force_lun is not None or io.stream is not None:
                self._n_bucketed -= 1
        elif k == "TRIM":
            self._n_trims -= 1

    def _admit_app(self, io, now):
        """Mapping-cache side IOs and trim semantics for host IOs."""
        mp = self.mapping
        if io.kind == "READ":
            ppa, side = mp.read_lookup(io.lpn)
            if ppa == UNMAPPED:
                # never-written address: fail straight back, no flash work;
                # delivered through the event queue so a burst of failures
                # cannot recurse through the OS callback chain
                io.ok = False
                io.dropped = True
                io.completed = now
                self.engine.schedule(("fail", io), now)
                return  # noqa: delivered via the queue, not recursion
            self._admit_side(io, side, now, as_preds=True)
        elif io.kind == "WRITE":
            side = mp.write_prepare(io.lpn)
            if self.detector is not None:
                self.detector.record(io.lpn)
            self._admit_side(io, side, now, as_preds=True)
        elif io.kind == "TRIM":
            old, side = mp.trim(io.lpn)
            if old != UNMAPPED:
                io.ppa = old
                if self.array.valid[old]:
                    self.array.invalidate(old)
            self._admit_side(io, side, now, as_preds=False)

    def _admit_side(self, io, side, now, as_preds):
        """Turn mapping descriptors into MAPPING-class IOs."""
        made = []
        prev_read = None
        for verb, tidx in side:
            if verb == "tread":
                m = self.new_io("MAPPING", "READ", tidx=tidx, now=now)
                prev_read = m
            else:
                deps = (prev_read,) if prev_read is not None else ()
                m = self.new_io("MAPPING", "WRITE", tidx=tidx, now=now,
                                preds=deps)
                prev_read = None
            made.append(m)
        for m in made:
            self.admit(m, now)
        if as_preds and made:
            io.pred_ids = tuple(m.id for m in made)
            io.n_preds = sum(1 for m in made if m.completed is None)
            for m in made:
                m.successors = tuple(m.successors) + (io,)

    # ---- hint state ------------------------------------------------------

    def set_temp_hint(self, lo, hi, temp):
        self.temp_hints.append((lo, hi, temp))

    def set_locality(self, group, lpns):
        for lpn in lpns:
            self.locality[lpn] = group

    def temp_of(self, lpn):
        for lo, hi, temp in reversed(self.temp_hints):
            if lo <= lpn < hi:
                return temp
        if self.detector is not None and self.detector.is_hot(lpn):
            return HOT
        return COLD

    # ---- dispatch --------------------------------------------------------

    def _candidates(self, now):
        """Head-of-line candidates: the best-ranked pending IO of each
        class. The combined list stays sorted by the frozen key; only the
        overdue flag varies with time, so overdue IOs are promoted with
        one stable partition when any deadline has passed."""
        order = self.pending
        if self._n_deadlines and self.cfg.deadline_boost:
            over = [io for io in order
                    if io.deadline is not None and io.deadline < now]
            if over:
                rest = [io for io in order
                        if io.deadline is None or io.deadline >= now]
                order = over + rest
        heads = []
        seen = set()
        for io in order:
            if io.cls not in seen:
                seen.add(io.cls)
                heads.append(io)
        return heads

    def _startable_luns(self, probe, now):
        """LUNs where a `probe`-shaped command could begin at `now`.
        Start/channel state is versioned by array.gen, so one probe per
        dispatch instant is enough until something actually starts."""
        memo = self._startable_memo.get(probe)
        gen = self.array.gen
        if memo is not None and memo[0] == now and memo[1] == gen:
            return memo[2]
        arr = self.array
        geo = arr.geo
        ppl = geo.pages_per_lun
        used = self._chan_used
        luns = [gl for gl in range(geo.total_luns)
                if geo.channel_of_lun(gl) not in used
                and arr.lun_startable(gl, now)
                and arr.can_start(probe, gl * ppl, now) is not None]
        self._startable_memo[probe] = (now, gen, luns)
        return luns

    def _try_start(self, io, now):
        """Place (if needed) and start one IO; True when it left pending
        (started or dropped as stale). Channel pruning: every command
        holds its channel over [now, now+t_cmd), so once one start lands
        on a channel, nothing else starts there this instant."""
        arr = self.array
        geo = arr.geo
        mp = self.mapping

        if io.kind == "TRIM":
            ppa = io.ppa if io.ppa is not None else -1
            ch = arr.channel_for(hw.TRIM, ppa)
            if ch in self._chan_used:
                return False
            comp = arr.can_start(hw.TRIM, ppa, now)
            if comp is None:
                # [now, t_cmd) is busy, which blocks every command kind
                self._chan_used.add(ch)
                self._read_blocked.add(ch)
                return False
            arr.start(hw.TRIM, ppa, now, comp=comp)
            self._chan_used.add(ch)
            self._read_blocked.add(ch)
            self._started(io, now, comp)
            return True

        if io.kind == "READ":
            if io.cls == "APP":
                ppa = mp.current(io.lpn)
                if ppa == UNMAPPED or not arr.valid[ppa]:
                    self._drop(io, now, notify=True)
                    return True
            elif io.tidx is not None and io.source == "MAPPING":
                ppa = mp.tpage_current(io.tidx)
                if ppa == UNMAPPED:
                    self._drop(io, now)
                    return True
            else:
                ppa = io.ppa  # migration source pages never move
            gl = ppa // self._ppl
            ch = gl // self._lpc
            if ch in self._read_blocked or gl not in self._lun_free:
                return False
            if io.src_ppa is not None and self._stale_migration(io):
                self._drop(io, now)
                if io.paired is not None:
                    self._drop(io.paired, now)
                return True
            comp = arr.can_start(hw.READ, ppa, now)
            if comp is None:
                # the LUN is idle, so the channel windows are what failed;
                # those are identical for every read starting now
                self._read_blocked.add(ch)
                return False
            io.ppa = ppa
            io.tag = arr.read_tag(ppa)
            arr.start(hw.READ, ppa, now, comp=comp)
            self._chan_used.add(ch)
            self._read_blocked.add(ch)
            self._started(io, now, comp)
            return True

        if io.kind == "WRITE" or io.kind == "COPYBACK":
            cb = io.kind == "COPYBACK"
            if self._cb_dead if cb else self._prog_dead:
                return False
            if io.src_ppa is not None and self._stale_migration(io):
                self._drop(io, now)
                return True
            choice = self._place(io, now)
            if choice is None:
                kind = hw.COPYBACK if cb else hw.PROGRAM
                if not self._startable_luns(kind, now):
                    # placement can only lose LUNs as commands start, so
                    # this kind stays unplaceable until the next instant
                    if cb:
                        self._cb_dead = True
                    else:
                        self._prog_dead = True
                return False
            ppa = self.alloc.commit(choice)
            kind = hw.COPYBACK if cb else hw.PROGRAM
            comp = arr.start(kind, ppa, now, src=io.src_ppa)
            io.ppa = ppa
            if io.kind == "COPYBACK" or io.src_ppa is not None:
                io.tag = arr.read_tag(io.src_ppa)
            else:
                io.tag = io.id  # payload tag for integrity checks
            ch = ppa // self._ppl // self._lpc
            self._chan_used.add(ch)
            self._read_blocked.add(ch)
            self._started(io, now, comp)
            return True

        if io.kind == "ERASE":
            gl = io.ppa // self._ppl
            ch = gl // self._lpc
            if ch in self._chan_used or gl not in self._lun_free:
                return False
            comp = arr.can_start(hw.ERASE, io.ppa, now)
            if comp is None:
                # LUN is idle, so [now, t_cmd) on the channel is what
                # failed; that window blocks every command kind
                self._chan_used.add(ch)
                self._read_blocked.add(ch)
                return False
            arr.start(hw.ERASE, io.ppa, now, comp=comp)
            self._chan_used.add(ch)
            self._read_blocked.add(ch)
            self._started(io, now, comp)
            return True

        raise ModelViolation(f"unknown io kind {io.kind}")

    def _place(self, io, now):
        """Resolve a write's destination page, or None when nothing can
        take it right now."""
        probe = hw.COPYBACK if io.kind == "COPYBACK" else hw.PROGRAM
        startable = self._startable_luns(probe, now)
        if io.force_lun is not None:
            if io.force_lun not in startable:
                return None
            return self.alloc.choose_in_lun(io.force_lun,
                                            io.stream if io.stream is not None
                                            else COLD, for_gc=True)
        if not startable:
            return None
        if io.stream is not None:
            return self.alloc.choose(io.stream, None, startable,
                                     for_gc=io.stream == GC_STREAM)
        # host write: locality group pins, hints beat the detector
        group = self.locality.get(io.lpn)
        temp = self.temp_of(io.lpn)
        return self.alloc.choose(temp, group, startable)

    def _stale_migration(self, io):
        """A migration whose source page was overwritten or trimmed while
        it waited is pointless; drop it instead of moving dead data."""
        if not self.array.valid[io.src_ppa]:
            return True
        if io.tidx is not None:
            return self.mapping.tpage_current(io.tidx) != io.src_ppa
        return self.mapping.current(io.lpn) != io.src_ppa

    def _started(self, io, now, comp):
        io.exec_started = now
        io.completed = comp
        self.inflight += 1
        self._from_pending(io)
        ca = self._comp_at
        ca[comp] = ca.get(comp, 0) + 1
        # the IoRequest itself is the completion event payload
        self.engine.schedule(io, comp)

    def _drop(self, io, now, notify=False):
        """Remove an undispatched IO; successors are released, not run."""
        if io.dropped and io.completed is not None:
            return
        io.dropped = True
        io.ok = False
        if io in self.blocked:
            self.blocked.discard(io)
        elif io.ssd_enqueued is not None and io.exec_started is None:
            self._from_pending(io)
        for s in io.successors:
            self._release(s)
        io.completed = now
        if notify:
            self._notify(io, now)

    def _release(self, successor):
        successor.n_preds -= 1
        if successor.n_preds == 0 and successor in self.blocked:
            self.blocked.discard(successor)
            self._to_pending(successor)
            self._released = True

    def dispatch(self, now):
        """Start every IO that can begin at `now`, best-ranked first.

        Starting an IO only consumes resources, so it can never make a
        previously rejected IO startable at the same instant; one pass in
        rank order is exact. A pass repeats only when a drop released
        blocked successors into pending, or (without greedy lookahead)
        when a class head started and exposed the next head.
        """
        if not self.n_pending:
            return
        arr = self.array
        self._chan_used.clear()
        self._read_blocked.clear()
        lun_free = self._lun_free
        lun_free.clear()
        for gl, lun in enumerate(arr.luns):
            if now >= lun.busy_until:
                lun_free.add(gl)
        self._prog_dead = False
        self._cb_dead = False
        if not lun_free:
            # every LUN is mid-command; only a pipelined program or a
            # targetless trim could possibly begin now
            may_write = (arr.pipelined_program and self._n_writes
                         and self._startable_luns(hw.PROGRAM, now))
            if not self._n_trims and not may_write:
                return
        if self.cfg.greedy_lookahead:
            self._dispatch_merge(now)
        else:
            self._dispatch_heads(now)

    def _dispatch_heads(self, now):
        """Head-of-line mode: only the best-ranked IO of each class is
        eligible, startable or not, so the global rank order is walked."""
        chan_used = self._chan_used
        n_chan = self.array.geo.channels
        while True:
            self._released = False
            started = False
            for io in self._candidates(now):
                if io.dropped:
                    continue  # removed by an earlier drop in this pass
                if self._try_start(io, now):
                    started = True
                    break
                if len(chan_used) == n_chan:
                    break  # every channel is held over [now, now+t_cmd)
            if not self._released and not started:
                return
            if not self.n_pending:
                return

    @staticmethod
    def _next_live(lst, idx, skip):
        """First pending entry of a bucket at or after idx; started and
        dropped leftovers are skipped, not removed, since index positions
        must stay stable for the duration of a scan pass."""
        n = len(lst)
        while idx < n:
            io = lst[idx]
            if io.exec_started is None and not io.dropped \
                    and (skip is None or io not in skip):
                return io, idx
            idx += 1
        return None, idx

    @staticmethod
    def _prune_bucket(lst):
        k = 0
        n = len(lst)
        while k < n and (lst[k].exec_started is not None or lst[k].dropped):
            k += 1
        if k:
            del lst[:k]

    def _dispatch_merge(self, now):
        """Greedy-lookahead mode: walk only the IOs that could actually
        start, in global rank order, by merging the per-resource buckets
        whose LUN can take a command this instant.

        Skipping a bucket is sound exactly when every IO in it would have
        probed false with no side effect: reads pinned to a busy LUN or a
        read-blocked channel cannot start and are not staleness-checked
        until they could; pinned and stream writes fail placement
        identically to their bucket head, which is probed. A release
        re-sorts a bucket mid-pass, so the pass restarts instead of
        trusting its cursors.
        """
        arr = self.array
        n_chan = arr.geo.channels
        lpc = self._lpc
        chan_used = self._chan_used
        read_blocked = self._read_blocked
        lun_free = self._lun_free
        boost = self.cfg.deadline_boost
        while True:
            self._released = False
            probed = None
            if self._n_deadlines and boost:
                over = [io for io in self._main
                        if io.deadline is not None and io.deadline < now
                        and io.exec_started is None and not io.dropped]
                if over:
                    probed = set()
                    for io in over:
                        if io.dropped:
                            continue  # a paired drop got it mid-loop
                        self._try_start(io, now)
                        probed.add(io)
                        if len(chan_used) == n_chan:
                            return
                    if self._released:
                        continue
            self._prune_bucket(self._main)
            if not self._n_bucketed:
                # nothing is pinned anywhere, so the merge degenerates to
                # walking _main; skip the heap scaffolding. A release
                # breaks the walk because it re-sorts the list under the
                # iterator.
                released = False
                for io in self._main:
                    if io.exec_started is not None or io.dropped:
                        continue
                    if probed is not None and io in probed:
                        continue
                    k = io.kind
                    if (k == "WRITE" and self._prog_dead) \
                            or (k == "COPYBACK" and self._cb_dead):
                        continue
                    self._try_start(io, now)
                    if self._released:
                        released = True
                        break
                    if len(chan_used) == n_chan:
                        return
                if not released or not self.n_pending:
                    return
                continue
            # seed one cursor per scannable source; entries are
            # (rank key, source number, index), rank keys never tie
            srcs = []
            heap = []
            io, idx = self._next_live(self._main, 0, probed)
            if io is not None:
                heap.append((io.skey, 0, idx))
            srcs.append((self._main, 0))
            for gl in lun_free:
                b = self._rlun.get(gl)
                if b:
                    self._prune_bucket(b)
                    io, idx = self._next_live(b, 0, None)
                    if io is not None and gl // lpc not in read_blocked:
                        heap.append((io.skey, len(srcs), idx))
                        srcs.append((b, gl // lpc + 1))
            for gl, b in self._wlun.items():
                if b and arr.lun_startable(gl, now):
                    self._prune_bucket(b)
                    io, idx = self._next_live(b, 0, None)
                    if io is not None:
                        heap.append((io.skey, len(srcs), idx))
                        srcs.append((b, 0))
            for b in self._wstream.values():
                if b:
                    self._prune_bucket(b)
                    io, idx = self._next_live(b, 0, None)
                    if io is not None:
                        heap.append((io.skey, len(srcs), idx))
                        srcs.append((b, 0))
            heapify(heap)
            while heap:
                _, sid, idx = heappop(heap)
                lst, rdch = srcs[sid]
                io = lst[idx]
                if io.exec_started is not None or io.dropped:
                    io, idx = self._next_live(lst, idx + 1, probed)
                    if io is not None:
                        heappush(heap, (io.skey, sid, idx))
                    continue
                if rdch and rdch - 1 in read_blocked:
                    continue  # whole bucket reads one blocked channel
                k = io.kind
                if (k == "WRITE" and self._prog_dead) \
                        or (k == "COPYBACK" and self._cb_dead):
                    if sid:
                        continue  # homogeneous bucket, all dead
                    advance = True
                else:
                    advance = self._try_start(io, now) or not sid
                if self._released:
                    break  # bucket order changed under the cursors
                if len(chan_used) == n_chan:
                    return
                if advance:
                    # main always advances; a bucket advances past a
                    # start or drop, but a probe failure parks it since
                    # everything behind the head fails the same way
                    io, idx = self._next_live(lst, idx + 1, probed)
                    if io is not None:
                        heappush(heap, (io.skey, sid, idx))
            if not self._released:
                return
            if not self.n_pending:
                return

    def arm_retry(self, now):
        """Make sure a wake-up exists at the next resource release if
        work is still waiting for hardware."""
        if not self.n_pending:
            return
        at = self.array.next_boundary(now)
        if at is None:
            return
        if at in self._comp_at:
            return  # a completion lands then; dispatch runs anyway
        if self._retry_at is not None and self._retry_at <= at \
                and self._retry_ev is not None:
            return
        if self._retry_ev is not None:
            self.engine.cancel(self._retry_ev)
        self._retry_ev = self.engine.schedule(("retry",), at)
        self._retry_at = at

    def retry_fired(self):
        self._retry_ev = None
        self._retry_at = None

    # ---- completion ------------------------------------------------------

    def complete(self, io, now):
        """Apply completion effects, record the trace row, wake waiters."""
        arr = self.array
        mp = self.mapping
        self.inflight -= 1
        left = self._comp_at[now] - 1
        if left:
            self._comp_at[now] = left
        else:
            del self._comp_at[now]

        if io.kind == "WRITE" or io.kind == "COPYBACK":
            if io.kind == "COPYBACK":
                arr.apply_copyback(io.ppa, io.tag, now)
            else:
                arr.apply_program(io.ppa, io.tag, now)
            if io.src_ppa is not None:
                # migration: move the mapping unless an overwrite won
                if io.tidx is not None:
                    moved = mp.tpage_rebind(io.tidx, io.src_ppa, io.ppa)
                else:
                    moved = mp.rebind(io.lpn, io.src_ppa, io.ppa)
                arr.invalidate(io.src_ppa if moved else io.ppa)
            elif io.source == "MAPPING":
                old = mp.tpage_bind(io.tidx, io.ppa)
                if old != UNMAPPED and arr.valid[old]:
                    arr.invalidate(old)
            else:
                old, side = mp.bind(io.lpn, io.ppa)
                if old != UNMAPPED and arr.valid[old]:
                    arr.invalidate(old)
                self._admit_side(io, side, now, as_preds=False)
        elif io.kind == "ERASE":
            arr.apply_erase(io.ppa, now)
            if io.gc_lun is not None and self.gc is not None:
                self.gc.erase_done(io.gc_lun)
            if io.wl_block is not None and self.wl is not None:
                self.wl.erase_done(io.wl_block)

        self.trace.append(io)
        for s in io.successors:
            self._release(s)

        if io.cls == "APP":
            if io.kind == "WRITE" and self.wl is not None:
                self.wl.on_app_write(
                    now, self.gc.active.values() if self.gc else ())
            self._notify(io, now)

        # free-block counts only move on placements and erases, and every
        # placement completes as a WRITE or COPYBACK row; reads can't
        # change what GC would decide
        if self.gc is not None and io.kind != "READ" and io.kind != "TRIM":
            self.gc.check(now, self.wl.active if self.wl else ())

    def _notify(self, io, now):
        if self.on_app_complete is not None:
            self.on_app_complete(io, now)

    # ---- audit helpers ---------------------------------------------------

    def idle(self):
        return not self.n_pending and not self.blocked and self.inflight == 0
