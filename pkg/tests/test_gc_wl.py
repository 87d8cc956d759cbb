"""Cleaning policies: victim choice, batch shape, temperature detection."""

import flashsim.gc_wl as gw
import flashsim.hardware as hw
import flashsim.mapping as mp

from helpers import fill_block, small_array


class FakeIo:
    def __init__(self, source, kind, **kw):
        self.source = source
        self.kind = kind
        self.lpn = kw.get("lpn")
        self.tidx = kw.get("tidx")
        self.src_ppa = kw.get("src_ppa")
        self.ppa = kw.get("ppa")
        self.force_lun = kw.get("force_lun")
        self.stream = kw.get("stream")
        self.preds = tuple(kw.get("preds", ()))
        self.paired = None


class FakeScheduler:
    """Records the batches a cleaner emits without running anything."""

    def __init__(self):
        self.admitted = []

    def new_io(self, source, kind, **kw):
        return FakeIo(source, kind, **kw)

    def admit(self, io):
        self.admitted.append(io)


# temperature detector ------------------------------------------------------

def test_detector_counts_filters_not_repeats():
    det = gw.TemperatureDetector(n_filters=4, bits=1024, n_hashes=2,
                                 window=8, hot_threshold=2)
    det.record(42)
    det.record(42)
    # repeats inside one window land in the same filter
    assert det.hits(42) == 1
    assert not det.is_hot(42)

    # fill out the window so the cursor advances, then write again
    for lpn in range(100, 106):
        det.record(lpn)
    det.record(42)
    assert det.hits(42) == 2
    assert det.is_hot(42)
    # one-off addresses from the first window are still just warm
    assert det.hits(100) == 1 and not det.is_hot(100)


def test_detector_never_misses_inside_the_window():
    det = gw.TemperatureDetector(n_filters=4, bits=4096, n_hashes=3,
                                 window=64, hot_threshold=2)
    for lpn in range(50):
        det.record(lpn)
    assert all(det.hits(lpn) >= 1 for lpn in range(50))


def test_detector_forgets_after_rotation():
    det = gw.TemperatureDetector(n_filters=2, bits=4096, n_hashes=2,
                                 window=4, hot_threshold=2)
    det.record(42)
    for lpn in range(200, 207):
        det.record(lpn)
    # eight writes: both slots rotated once, the first window was wiped
    assert det.hits(42) == 0


# garbage collector ---------------------------------------------------------

def test_victim_is_fullest_garbage_fewest_erases_lowest_index():
    arr = small_array()
    gc = gw.GarbageCollector(arr, None, None, greediness=2,
                             use_copyback=False)
    st, nv, er, inf = (arr.block_state, arr.block_valid,
                       arr.block_erases, arr.block_inflight)

    def craft(blk, valid, erases=0, inflight=0, state=hw.B_FULL):
        st[blk], nv[blk], er[blk], inf[blk] = state, valid, erases, inflight

    craft(0, 16)                     # no garbage, pure wear: never picked
    craft(1, 3, erases=5)
    craft(2, 3, erases=2)
    craft(3, 1, inflight=1)          # mid-flight, untouchable
    craft(4, 2, state=hw.B_OPEN)     # still accepting writes
    craft(5, 2)                      # valid but excluded by the caller
    craft(6, 3, erases=2)

    assert gc.select_victim(0, skip={5}) == 2
    assert gc.select_victim(0, skip={2, 5}) == 6
    assert gc.select_victim(0, skip={1, 2, 5, 6}) is None

    # other LUNs only see their own blocks
    craft(17, 1)
    assert gc.select_victim(1, skip=set()) == 17


def test_gc_batch_shape_copyback():
    arr = small_array()
    pm = mp.PageTableMap(arr.geo, 768, ram_bytes=1 << 20)
    alloc = mp.BlockAllocator(arr)
    t = fill_block(arr, pm, 0, range(16), 0)
    # overwrite most of the block so it holds garbage
    t = fill_block(arr, pm, 1, range(12), t)
    # one live page belongs to a translation page, not an app lpn
    pm.reverse[15] = mp.tpage_rlpn(3)

    sched = FakeScheduler()
    gc = gw.GarbageCollector(arr, pm, alloc, greediness=15,
                             use_copyback=True)
    gc.sched = sched
    gc.check(now=t)

    assert gc.active == {0: 0}
    assert gc.migrations == 4
    movers, erase = sched.admitted[:-1], sched.admitted[-1]
    assert [io.kind for io in movers] == ["COPYBACK"] * 4
    assert sorted(io.src_ppa for io in movers) == [12, 13, 14, 15]
    assert all(io.force_lun == 0 for io in movers)
    assert all(io.stream == mp.GC_STREAM for io in movers)
    by_src = {io.src_ppa: io for io in movers}
    assert by_src[12].lpn == 12 and by_src[12].tidx is None
    assert by_src[15].lpn is None and by_src[15].tidx == 3
    assert erase.kind == "ERASE" and erase.ppa == 0
    assert erase.preds == tuple(movers)
    assert erase.gc_lun == 0

    # an active LUN is not re-collected until its erase lands
    n = len(sched.admitted)
    gc.check(now=t)
    assert len(sched.admitted) == n
    gc.erase_done(0)
    gc.check(now=t)
    assert len(sched.admitted) > n


def test_gc_batch_shape_read_write_pairs():
    arr = small_array()
    pm = mp.PageTableMap(arr.geo, 768, ram_bytes=1 << 20)
    t = fill_block(arr, pm, 0, range(16), 0)
    t = fill_block(arr, pm, 1, range(14), t)

    sched = FakeScheduler()
    gc = gw.GarbageCollector(arr, pm, mp.BlockAllocator(arr),
                             greediness=15, use_copyback=False)
    gc.sched = sched
    gc.check(now=t)

    assert gc.migrations == 2
    movers, erase = sched.admitted[:-1], sched.admitted[-1]
    assert [io.kind for io in movers] == ["READ", "WRITE", "READ", "WRITE"]
    for rd, pr in zip(movers[0::2], movers[1::2]):
        assert rd.ppa == rd.src_ppa == pr.src_ppa
        assert pr.preds == (rd,)
        assert rd.paired is pr
        assert pr.force_lun == 0
    assert erase.preds == tuple(movers)


def test_gc_copyback_request_needs_hardware_support():
    arr = small_array(copyback_ok=False)
    gc = gw.GarbageCollector(arr, None, None, greediness=2,
                             use_copyback=True)
    assert gc.use_copyback is False


def test_gc_trigger_respects_floor_and_reserve():
    arr = small_array()
    gc = gw.GarbageCollector(arr, None, None, greediness=4,
                             use_copyback=True)
    calls = []
    gc.select_victim = lambda gl, skip: calls.append(gl) or None

    arr.free_blocks[0] = 4   # at the floor: leave alone
    arr.free_blocks[1] = 3   # below it: clean
    arr.free_blocks[2] = 16
    arr.free_blocks[3] = 16
    gc.check(now=0)
    assert calls == [1]

    # a floor of 1 still cleans at the allocator's reserved last block
    gc2 = gw.GarbageCollector(arr, None, None, greediness=1,
                              use_copyback=True)
    calls2 = []
    gc2.select_victim = lambda gl, skip: calls2.append(gl) or None
    arr.free_blocks[1] = 1
    gc2.check(now=0)
    assert calls2 == [1]


# wear leveler --------------------------------------------------------------

def test_wl_interval_estimate_is_seeded_pessimistically():
    arr = small_array()
    wl = gw.WearLeveler(arr, None, None, staleness=4, enabled=True)
    assert wl.avg_erase_interval() == arr.timing.t_erase * 1000
    arr.erase_events = 3
    arr.first_erase_at = 1000
    arr.last_erase_at = 5000
    assert wl.avg_erase_interval() == 2000


def test_wl_scan_cadence_and_victim():
    arr = small_array()
    pm = mp.PageTableMap(arr.geo, 768, ram_bytes=1 << 20)
    t = fill_block(arr, pm, 0, range(16), 0)
    t = fill_block(arr, pm, 1, range(8), t)

    # block 0 is cold: far under the mean erase count and long idle
    for blk in range(1, arr.geo.total_blocks):
        arr.block_erases[blk] = 2
    arr.erase_events = 2
    arr.first_erase_at = 0
    arr.last_erase_at = 1000

    sched = FakeScheduler()
    wl = gw.WearLeveler(arr, pm, mp.BlockAllocator(arr), staleness=4,
                        enabled=True)
    wl.sched = sched
    wl.SCAN_EVERY = 4

    now = 10 ** 9
    for _ in range(3):
        wl.on_app_write(now)
    assert sched.admitted == []      # cadence not reached yet
    wl.on_app_write(now)

    assert wl.active == {0}
    assert wl.migrations == 8        # pages 8..15 were overwritten
    movers, erase = sched.admitted[:-1], sched.admitted[-1]
    assert [io.kind for io in movers] == ["READ", "WRITE"] * 8
    assert all(io.stream == mp.COLD for io in movers[1::2])
    assert all(io.force_lun is None for io in movers[1::2])
    assert erase.wl_block == 0
    assert erase.preds == tuple(movers)

    # busy blocks are skipped on the next scan, and nothing else is both
    # under-erased and stale
    for _ in range(4):
        wl.on_app_write(now)
    assert len(sched.admitted) == len(movers) + 1
    wl.erase_done(0)
    assert wl.active == set()


def test_wl_disabled_never_scans():
    arr = small_array()
    wl = gw.WearLeveler(arr, None, None, staleness=4, enabled=False)
    wl.SCAN_EVERY = 1
    wl.sched = None                  # would crash if a scan ever emitted
    wl._scan = lambda *a: (_ for _ in ()).throw(AssertionError("scanned"))
    for _ in range(8):
        wl.on_app_write(0)
    assert wl.writes == 0
