"""Built-in workload threads and the preconditioning graph builder.

Every generator is resubmission-driven: init() fills its in-flight window
and call_back() tops it up as completions arrive, so virtual time stays
meaningful and nothing is driven off wall-clock-style timers. Custom
threads subclass WorkloadThread (host module) and are registered with the
simulation directly; the generators here are the ones reachable from a
config file.
"""

from .errors import ConfigError
from .host import (WorkloadThread, submit_read, submit_write, trim,
                   tag_priority, tag_temperature, tag_locality)

M64 = (1 << 64) - 1


class PacedThread(WorkloadThread):
    """Window-paced submission: keep up to `window` IOs in flight until a
    generator-defined supply runs out.

    Subclasses implement _next(ctx) -> list of Messages for ONE more IO
    (or more; in-flight accounting counts submissions), returning None
    when exhausted.
    """

    def __init__(self, window=16, priority=0, deadline_ns=0):
        self.window = window
        self.priority = priority
        self.deadline_ns = deadline_ns
        self.inflight = 0
        self.exhausted = False

    def _next(self, ctx):
        raise NotImplementedError

    def _decorate(self, msgs):
        """Attach the thread's standing priority tag to each submission."""
        if not self.priority:
            return msgs
        out = []
        for m in msgs:
            out.append(m)
            if m.kind == "SUBMIT_IO":
                out.append(tag_priority(None, self.priority))
        return out

    def _fill(self, ctx):
        msgs = []
        while not self.exhausted and self.inflight < self.window:
            batch = self._next(ctx)
            if batch is None:
                self.exhausted = True
                break
            self.inflight += sum(1 for m in batch
                                 if m.kind in ("SUBMIT_IO", "TRIM"))
            msgs.extend(self._decorate(batch))
        if self.exhausted and self.inflight == 0:
            ctx.finish()
        return msgs

    def init(self, ctx):
        return self._fill(ctx)

    def call_back(self, ctx, io):
        self.inflight -= 1
        return self._fill(ctx)


class SequentialWriter(PacedThread):
    """Writes lpn_start..lpn_end-1 in order, `passes` times over."""

    def __init__(self, lpn_start, lpn_end, passes=1, **kw):
        super().__init__(**kw)
        self.start = lpn_start
        self.span = lpn_end - lpn_start
        self.total = self.span * passes
        self.i = 0

    def _next(self, ctx):
        if self.i >= self.total:
            return None
        lpn = self.start + self.i % self.span
        self.i += 1
        return [submit_write(lpn)]


class PermutationWriter(PacedThread):
    """Writes every lpn in the range exactly once, in shuffled order.
    Used for random preconditioning, where full coverage matters."""

    def __init__(self, lpn_start, lpn_end, **kw):
        super().__init__(**kw)
        self.start = lpn_start
        self.span = lpn_end - lpn_start
        self.order = None
        self.i = 0

    def _next(self, ctx):
        if self.order is None:
            self.order = list(range(self.span))
            ctx.rng.shuffle(self.order)
        if self.i >= self.span:
            return None
        lpn = self.start + self.order[self.i]
        self.i += 1
        return [submit_write(lpn)]


class RandomWriter(PacedThread):
    """Uniform random overwrites; optionally skewed so that a hot slice
    of the range takes most of the writes, with temperature hints sent
    when requested (and silently dropped on a closed interface)."""

    def __init__(self, lpn_start, lpn_end, io_count,
                 hot_fraction=0.0, hot_write_fraction=0.0,
                 tag_temp=False, **kw):
        super().__init__(**kw)
        self.start = lpn_start
        self.span = lpn_end - lpn_start
        self.io_count = io_count
        self.hot_span = int(self.span * hot_fraction)
        self.hot_write_fraction = hot_write_fraction
        self.tag_temp = tag_temp and self.hot_span > 0
        self.i = 0

    def init(self, ctx):
        msgs = []
        if self.tag_temp:
            msgs.append(tag_temperature(self.start,
                                        self.start + self.hot_span, "HOT"))
            msgs.append(tag_temperature(self.start + self.hot_span,
                                        self.start + self.span, "COLD"))
        return msgs + self._fill(ctx)

    def _next(self, ctx):
        if self.i >= self.io_count:
            return None
        self.i += 1
        rng = ctx.rng
        if self.hot_span and rng.random() < self.hot_write_fraction:
            lpn = self.start + rng.randrange(self.hot_span)
        elif self.hot_span:
            lpn = self.start + self.hot_span + rng.randrange(
                self.span - self.hot_span)
        else:
            lpn = self.start + rng.randrange(self.span)
        return [submit_write(lpn)]


class RandomReader(PacedThread):
    """Uniform random reads; a nonzero deadline_ns puts a deadline that
    far in the future on every read."""

    def __init__(self, lpn_start, lpn_end, io_count, **kw):
        super().__init__(**kw)
        self.start = lpn_start
        self.span = lpn_end - lpn_start
        self.io_count = io_count
        self.i = 0

    def _next(self, ctx):
        if self.i >= self.io_count:
            return None
        self.i += 1
        lpn = self.start + ctx.rng.randrange(self.span)
        return [submit_read(lpn, deadline=self.deadline_ns or None)]


def _hash_partition(i, partitions):
    x = (i + 1) * 0x9E3779B97F4A7C15 & M64
    x ^= x >> 29
    return x % partitions


class GraceHashJoin(WorkloadThread):
    """Two-phase hash join IO pattern over pre-existing relations.

    Phase 1 scans R then S (one read per page) and, as each page arrives,
    writes it once into its hash partition. Phase 2 reads every partition
    page back, partition by partition. Totals: 2(R+S) reads, R+S writes.
    Partition regions are announced with locality tags when enabled.
    """

    def __init__(self, r_pages, s_pages, partitions, region_start=0,
                 locality_tags=True, window=16, priority=0, deadline_ns=0,
                 **kw):
        self.r = r_pages
        self.s = s_pages
        self.partitions = partitions
        self.base = region_start
        self.locality_tags = locality_tags
        self.window = window
        self.priority = priority
        n = self.r + self.s
        self.cap = -(-n // partitions)
        self.part_base = self.base + n
        self.part_fill = [0] * partitions
        self.scan_i = 0
        self.writes_done = 0
        self.phase2_queue = None
        self.phase2_i = 0
        self.inflight = 0

    def _input_lpn(self, i):
        return self.base + i

    def _part_slot(self, j, k):
        return self.part_base + j * self.cap + k

    def init(self, ctx):
        if self.r + self.s == 0:
            ctx.finish()
            return []
        msgs = []
        if self.locality_tags:
            for j in range(self.partitions):
                lpns = range(self._part_slot(j, 0), self._part_slot(j, 0)
                             + self.cap)
                msgs.append(tag_locality(f"join:{j}", lpns))
        return msgs + self._pump(ctx)

    def _pump(self, ctx):
        msgs = []
        n = self.r + self.s
        # phase 1: keep the scan going
        while self.phase2_queue is None and self.inflight < self.window \
                and self.scan_i < n:
            msgs.append(submit_read(self._input_lpn(self.scan_i)))
            self.scan_i += 1
            self.inflight += 1
        # phase 2: drain the partition read list
        if self.phase2_queue is not None:
            while (self.inflight < self.window
                   and self.phase2_i < len(self.phase2_queue)):
                msgs.append(submit_read(self.phase2_queue[self.phase2_i]))
                self.phase2_i += 1
                self.inflight += 1
        if self.priority:
            out = []
            for m in msgs:
                out.append(m)
                if m.kind == "SUBMIT_IO":
                    out.append(tag_priority(None, self.priority))
            return out
        return msgs

    def call_back(self, ctx, io):
        self.inflight -= 1
        msgs = []
        n = self.r + self.s
        if self.phase2_queue is None:
            if io.kind == "READ":
                # route the scanned page to its partition
                i = io.lpn - self.base
                j = _hash_partition(i, self.partitions)
                slot = self._part_slot(j, self.part_fill[j])
                self.part_fill[j] += 1
                msgs.append(submit_write(slot))
                self.inflight += 1
            else:
                self.writes_done += 1
                if self.writes_done == n and self.inflight == 0:
                    self._start_phase2()
        msgs.extend(self._pump(ctx))
        if self.phase2_queue is not None and self.phase2_i >= \
                len(self.phase2_queue) and self.inflight == 0:
            ctx.finish()
        return msgs

    def _start_phase2(self):
        q = []
        for j in range(self.partitions):
            for k in range(self.part_fill[j]):
                q.append(self._part_slot(j, k))
        self.phase2_queue = q


class ExtentAllocator(PacedThread):
    """File-system-flavoured pattern: allocate, fill, and free fixed-size
    extents in a 2:6:2 mix, trimming pages when an extent is freed."""

    def __init__(self, region_start, region_end, extent_pages, op_count,
                 **kw):
        super().__init__(**kw)
        self.base = region_start
        self.extent_pages = extent_pages
        self.n_extents = (region_end - region_start) // extent_pages
        if self.n_extents < 1:
            raise ConfigError("extent region smaller than one extent")
        self.op_count = op_count
        self.ops = 0
        self.free_list = list(range(self.n_extents))
        self.allocated = []

    def _extent_lpn(self, ext, page):
        return self.base + ext * self.extent_pages + page

    def _next(self, ctx):
        rng = ctx.rng
        while self.ops < self.op_count:
            self.ops += 1
            r = rng.random()
            if r < 0.2 and self.free_list:
                ext = self.free_list.pop(rng.randrange(len(self.free_list)))
                self.allocated.append(ext)
                continue  # allocation is metadata only, no IO
            if r < 0.8 or not self.allocated:
                if not self.allocated:
                    if not self.free_list:
                        continue
                    ext = self.free_list.pop(
                        rng.randrange(len(self.free_list)))
                    self.allocated.append(ext)
                ext = self.allocated[rng.randrange(len(self.allocated))]
                page = rng.randrange(self.extent_pages)
                return [submit_write(self._extent_lpn(ext, page))]
            ext = self.allocated.pop(rng.randrange(len(self.allocated)))
            self.free_list.append(ext)
            return [trim(self._extent_lpn(ext, p))
                    for p in range(self.extent_pages)]
        return None


def build_generator(spec, logical_pages):
    """Instantiate a built-in generator from a validated config spec."""
    kind = spec["kind"]
    window = spec["window"]
    priority = spec["priority"]
    deadline_ns = spec["deadline_ns"]
    end = spec.get("lpn_end", -1)
    if end in (-1, None):
        end = logical_pages
    common = dict(window=window, priority=priority, deadline_ns=deadline_ns)
    if kind == "seq_writer":
        return SequentialWriter(spec["lpn_start"], end, spec["passes"],
                                **common)
    if kind == "random_writer":
        return RandomWriter(spec["lpn_start"], end, spec["io_count"],
                            hot_fraction=spec["hot_fraction"],
                            hot_write_fraction=spec["hot_write_fraction"],
                            tag_temp=spec["tag_temperature"], **common)
    if kind == "random_reader":
        return RandomReader(spec["lpn_start"], end, spec["io_count"],
                            **common)
    if kind == "grace_join":
        return GraceHashJoin(spec["r_pages"], spec["s_pages"],
                             spec["partitions"],
                             region_start=spec["region_start"],
                             locality_tags=spec["locality_tags"],
                             window=window, priority=priority)
    if kind == "extent_alloc":
        rend = spec["region_end"]
        if rend in (-1, None):
            rend = logical_pages
        return ExtentAllocator(spec["region_start"], rend,
                               spec["extent_pages"], spec["op_count"],
                               **common)
    raise ConfigError(f"unknown generator kind {kind!r}")


def precondition_threads(mode, logical_pages, window=32):
    """Thread specs (name, generator, depends_on) that bring the device
    to a defined state before measurement. Returns ([(name, gen, deps)],
    last_name)."""
    if mode == "none":
        return [], None
    if mode == "sequential":
        gen = SequentialWriter(0, logical_pages, 1, window=window)
        return [("_pre_seq", gen, ())], "_pre_seq"
    if mode == "random":
        gen = PermutationWriter(0, logical_pages, window=window)
        return [("_pre_rand", gen, ())], "_pre_rand"
    if mode == "seq_then_random":
        seq = SequentialWriter(0, logical_pages, 1, window=window)
        rnd = RandomWriter(0, logical_pages, logical_pages, window=window)
        return ([("_pre_seq", seq, ()), ("_pre_rand", rnd, ("_pre_seq",))],
                "_pre_rand")
    raise ConfigError(f"unknown precondition mode {mode!r}")
