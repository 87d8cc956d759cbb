"""Top-level wiring and the single driver loop.

Simulation.from_config builds the whole stack (flash array, mapping,
allocator, scheduler, GC, wear leveler, host OS, workload threads) from a
validated config dict, and run() pulls the event queue to completion.
"""

import gc as _pygc
import hashlib
import random

from . import config as cfgmod
from .engine import EventQueue, SimulationComplete
from .errors import OutOfSpaceError, SimulationError
from .gc_wl import TemperatureDetector, GarbageCollector, WearLeveler
from .hardware import Geometry, TimingProfile, FlashArray
from .host import HostOs
from .mapping import build_mapping, BlockAllocator
from .scheduler import SsdScheduler, SchedulerConfig, IoRequest
from .workloads import build_generator, precondition_threads


def thread_rng_factory(seed):
    """Per-thread RNG streams: adding or removing one thread never
    perturbs the draws any other thread sees."""
    def make(tid):
        h = hashlib.md5(f"{seed}:{tid}".encode()).digest()
        return random.Random(int.from_bytes(h[:8], "little"))
    return make


class RunResult:
    __slots__ = ("config", "seed", "trace", "measured", "logical_pages",
                 "sim", "metric_rows")

    def __init__(self, config, seed, trace, measured, logical_pages, sim):
        self.config = config
        self.seed = seed
        self.trace = trace
        self.measured = measured      # tid -> bool
        self.logical_pages = logical_pages
        self.sim = sim                # live stack, handy for inspection
        self.metric_rows = None       # filled when a driver writes metrics


def feasibility_error(cfg):
    """Diagnose a logical space the GC floor can never make room for.

    The collector stops cleaning a LUN only once it holds max(greediness,
    2) free blocks, so valid data above (blocks_per_lun - floor) blocks
    per LUN leaves it shuffling valid pages forever without gaining a
    page. Returns a one-line diagnostic, or None when the config fits.
    """
    hw = cfg["hardware"]
    ctl = cfg["controller"]
    total_pages = (hw["channels"] * hw["luns_per_channel"]
                   * hw["blocks_per_lun"] * hw["pages_per_block"])
    logical = int(total_pages * (1.0 - ctl["overprovision"]) + 1e-6)
    floor = max(ctl["gc_greediness"], 2)
    usable_blocks = hw["blocks_per_lun"] - floor
    usable = (usable_blocks * hw["pages_per_block"]
              * hw["channels"] * hw["luns_per_channel"])
    if logical > usable:
        return (f"logical space of {logical} pages cannot fit: the GC "
                f"floor of {floor} free blocks per LUN leaves "
                f"{max(usable, 0)} usable pages; raise "
                f"controller.overprovision or lower controller."
                f"gc_greediness")
    return None


class Simulation:
    def __init__(self, cfg, seed):
        hw = cfg["hardware"]
        ctl = cfg["controller"]
        osc = cfg["os"]

        infeasible = feasibility_error(cfg)
        if infeasible:
            raise OutOfSpaceError(infeasible)

        self.cfg = cfg
        self.seed = seed
        self.engine = EventQueue()
        self.geo = Geometry(hw["channels"], hw["luns_per_channel"],
                            hw["blocks_per_lun"], hw["pages_per_block"],
                            hw["page_size"])
        self.timing = TimingProfile(hw)
        self.array = FlashArray(self.geo, self.timing,
                                interleaving=ctl["interleaving"],
                                copyback_ok=hw["copyback"],
                                pipelined_program=hw["pipelined_program"])
        self.mapping = build_mapping(cfg, self.geo)
        self.alloc = BlockAllocator(self.array)
        self.sched = SsdScheduler(self.engine, self.array, self.mapping,
                                  self.alloc, SchedulerConfig(ctl))
        if ctl["temp_detector"]:
            self.sched.detector = TemperatureDetector(
                ctl["temp_filters"], ctl["temp_filter_bits"],
                ctl["temp_hashes"], ctl["temp_window"],
                ctl["temp_hot_threshold"])
        gc = GarbageCollector(self.array, self.mapping, self.alloc,
                              ctl["gc_greediness"], ctl["gc_copyback"])
        gc.sched = self.sched
        self.sched.gc = gc
        wl = WearLeveler(self.array, self.mapping, self.alloc,
                         ctl["staleness_factor"], ctl["wl_enabled"])
        wl.sched = self.sched
        self.sched.wl = wl
        self.gc = gc
        self.wl = wl

        depth = osc["queue_depth"] or 2 * self.geo.total_luns
        self.host = HostOs(self.engine, self.sched, depth, osc["policy"],
                           osc["open_interface"],
                           self.mapping.logical_pages,
                           thread_rng_factory(seed))

    @classmethod
    def from_config(cls, cfg, seed):
        sim = cls(cfg, seed)
        sim._add_config_threads()
        return sim

    def _add_config_threads(self):
        logical = self.mapping.logical_pages
        pre, last = precondition_threads(
            self.cfg["workload"]["precondition"], logical)
        for name, gen, deps in pre:
            self.host.add_thread(name, gen, depends_on=deps, measured=False)
        barrier = (last,) if last else ()
        for spec in cfgmod.thread_specs(self.cfg):
            gen = build_generator(spec, logical)
            deps = tuple(d for d in spec["depends_on"].split(",") if d)
            self.host.add_thread(spec["name"], gen,
                                 depends_on=deps + barrier,
                                 measured=spec["measured"])

    def add_thread(self, tid, obj, depends_on=(), measured=True):
        """Register a custom thread object alongside config-defined ones."""
        return self.host.add_thread(tid, obj, depends_on, measured)

    # ---- driver ----------------------------------------------------------

    def _handle(self, payload, now):
        # completion events carry the IoRequest itself; control events
        # are small tagged tuples
        if payload.__class__ is IoRequest:
            self.sched.complete(payload, now)
        elif payload[0] == "fail":
            self.sched._notify(payload[1], now)
        elif payload[0] == "retry":
            self.sched.retry_fired()
        else:
            raise SimulationError(f"unknown event {payload!r}")

    def run(self):
        engine = self.engine
        sched = self.sched
        host = self.host
        handle = self._handle
        advance = engine.advance
        peek = engine.next_fire_at
        os_dispatch = host.os_dispatch
        dispatch = sched.dispatch
        arm_retry = sched.arm_retry

        # the IO graph is acyclic (successor tuples only point forward),
        # so cycle collection buys nothing and costs a lot at this
        # allocation rate
        gc_was_on = _pygc.isenabled()
        _pygc.disable()
        try:
            host.start(0)
            os_dispatch(0)
            dispatch(0)
            arm_retry(0)
            while True:
                try:
                    now, _, payload = advance()
                except SimulationComplete:
                    break
                handle(payload, now)
                # drain co-scheduled events so releases at `now` are
                # visible to the single dispatch pass at `now`
                while peek() == now:
                    _, _, payload = advance()
                    handle(payload, now)
                os_dispatch(now)
                dispatch(now)
                arm_retry(now)
        finally:
            if gc_was_on:
                _pygc.enable()

        if not host.all_done():
            stuck = [t for t, ts in host.threads.items()
                     if ts.state != ts.DONE]
            raise SimulationError(f"stalled with threads not done: {stuck}")
        if not (sched.idle() and host.idle()):
            raise SimulationError("stalled with IOs still queued")
        measured = {t: ts.measured for t, ts in host.threads.items()}
        return RunResult(self.cfg, self.seed, sched.trace, measured,
                         self.mapping.logical_pages, self)


def run_config(cfg, seed):
    return Simulation.from_config(cfg, seed).run()
