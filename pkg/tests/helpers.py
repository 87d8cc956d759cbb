"""Shared builders for the test suite."""

import flashsim.config as cfgmod
import flashsim.hardware as hw
from flashsim.hardware import Geometry, TimingProfile, FlashArray
from flashsim.mapping import UNMAPPED
from flashsim.sim import Simulation


def small_cfg():
    """2 channels x 2 LUNs x 16 blocks x 16 pages; quick to run and
    small enough that GC and WL activate within a few thousand IOs."""
    cfg = cfgmod.default_config()
    hwc = cfg["hardware"]
    hwc["channels"] = 2
    hwc["luns_per_channel"] = 2
    hwc["blocks_per_lun"] = 16
    hwc["pages_per_block"] = 16
    cfg["controller"]["overprovision"] = 0.25
    return cfg


def slc_timing():
    return dict(cfgmod.default_config()["hardware"])


def small_array(interleaving=True, copyback_ok=True,
                pipelined_program=False, cell_type="slc"):
    """Bare FlashArray on the small geometry, no controller on top."""
    hwc = dict(cfgmod.default_config()["hardware"])
    hwc.update(channels=2, luns_per_channel=2, blocks_per_lun=16,
               pages_per_block=16, cell_type=cell_type)
    geo = Geometry(hwc["channels"], hwc["luns_per_channel"],
                   hwc["blocks_per_lun"], hwc["pages_per_block"],
                   hwc["page_size"])
    return FlashArray(geo, TimingProfile(hwc), interleaving=interleaving,
                      copyback_ok=copyback_ok,
                      pipelined_program=pipelined_program)


def fill_block(arr, pm, blk, lpns, t):
    """Program every page of blk, binding page i to lpns[i]. Returns the
    completion time of the last program."""
    lo = blk * arr.geo.pages_per_block
    if arr.block_state[blk] == hw.B_FREE:
        arr.open_block(blk)
    for i, lpn in enumerate(lpns):
        ppa = lo + i
        t = arr.start(hw.PROGRAM, ppa, t)
        arr.apply_program(ppa, lpn, t)
        old, _ = pm.bind(lpn, ppa)
        if old != UNMAPPED:
            arr.invalidate(old)
    return t


def run_threads(cfg, seed, threads, measured=None):
    """Build a simulation, attach (tid, obj[, depends]) tuples, run it.
    Returns the RunResult."""
    sim = Simulation(cfg, seed)
    for entry in threads:
        tid, obj = entry[0], entry[1]
        deps = entry[2] if len(entry) > 2 else ()
        m = True if measured is None else measured.get(tid, True)
        sim.add_thread(tid, obj, depends_on=deps, measured=m)
    return sim.run()
