"""Garbage collection, wear leveling, and write-temperature detection.

Both cleaners work the same way: pick a victim block, emit one migration
IO per live page plus an erase that is predecessor-gated on all of them,
and hand the batch to the scheduler. Migrations re-check the mapping when
they dispatch, so a page overwritten while its migration waited is simply
skipped. GC keeps its destinations inside the victim's own LUN (the last
free block of every LUN is reserved for it), which is also what makes
copyback usable and keeps cleaning deadlock-free; the wear leveler is
under no such pressure and places its cold data anywhere.
"""

from .mapping import COLD, GC_STREAM, rlpn_tpage
from .hardware import B_FULL

M64 = (1 << 64) - 1


def _mix(x, mul1, mul2):
    x = (x ^ (x >> 30)) * mul1 & M64
    x = (x ^ (x >> 27)) * mul2 & M64
    return x ^ (x >> 31)


class TemperatureDetector:
    """Rotating Bloom filters over the logical write stream.

    Writes are inserted into the current filter; after every `window`
    writes the cursor advances and the filter it lands on is wiped. An
    address counts as hot when at least `hot_threshold` of the filters
    contain it, i.e. it kept showing up across recent windows.
    """

    def __init__(self, n_filters, bits, n_hashes, window, hot_threshold):
        self.n_filters = n_filters
        self.bits = bits
        self.n_hashes = n_hashes
        self.window = window
        self.hot_threshold = hot_threshold
        self.filters = [bytearray(bits // 8 + 1) for _ in range(n_filters)]
        self.cursor = 0
        self.seen = 0

    def _positions(self, lpn):
        h1 = _mix(lpn + 0x9E3779B97F4A7C15, 0xBF58476D1CE4E5B9,
                  0x94D049BB133111EB)
        h2 = _mix(lpn + 0xD1B54A32D192ED03, 0xFF51AFD7ED558CCD,
                  0xC4CEB9FE1A85EC53) | 1
        return [(h1 + i * h2) % self.bits for i in range(self.n_hashes)]

    def record(self, lpn):
        cur = self.filters[self.cursor]
        for pos in self._positions(lpn):
            cur[pos >> 3] |= 1 << (pos & 7)
        self.seen += 1
        if self.seen % self.window == 0:
            self.cursor = (self.cursor + 1) % self.n_filters
            filt = self.filters[self.cursor]
            for i in range(len(filt)):
                filt[i] = 0

    def hits(self, lpn):
        pos = self._positions(lpn)
        count = 0
        for filt in self.filters:
            for p in pos:
                if not filt[p >> 3] & (1 << (p & 7)):
                    break
            else:
                count += 1
        return count

    def is_hot(self, lpn):
        return self.hits(lpn) >= self.hot_threshold


class GarbageCollector:
    """Greedy per-LUN cleaning with a free-block floor.

    A LUN with fewer than `greediness` free blocks gets one victim batch
    at a time: the full block with the fewest valid pages (ties: fewest
    erases, then lowest index). Live pages move by copyback when enabled,
    otherwise by read+program pairs, always within the LUN.
    """

    def __init__(self, array, mapping, alloc, greediness, use_copyback):
        self.array = array
        self.mapping = mapping
        self.alloc = alloc
        self.greediness = greediness
        self.use_copyback = use_copyback and array.copyback_ok
        self.sched = None          # wired by the simulation
        self.active = {}           # gl -> victim blk
        self.migrations = 0        # pages moved, for experiment metrics

    def select_victim(self, gl, skip):
        geo = self.array.geo
        lo = gl * geo.blocks_per_lun
        hi = lo + geo.blocks_per_lun
        state = self.array.block_state
        nvalid = self.array.block_valid
        inflight = self.array.block_inflight
        erases = self.array.block_erases
        best = -1
        best_key = None
        for blk in range(lo, hi):
            if state[blk] != B_FULL or inflight[blk] or blk in skip:
                continue
            if nvalid[blk] == geo.pages_per_block:
                # no garbage: moving every page consumes exactly the
                # space the erase returns, so collecting it is pure wear
                continue
            key = (nvalid[blk], erases[blk], blk)
            if best < 0 or key < best_key:
                best, best_key = blk, key
        return best if best >= 0 else None

    def check(self, now, wl_busy=()):
        for gl in range(self.array.geo.total_luns):
            if gl in self.active:
                continue
            free = self.array.free_blocks[gl]
            # free == 1 is the allocator's reserved block; always clean at
            # that point even if the configured floor is lower
            if free >= self.greediness and free > 1:
                continue
            skip = set(self.active.values()) | set(wl_busy)
            blk = self.select_victim(gl, skip)
            if blk is None:
                continue
            self.active[gl] = blk
            self._emit_batch(gl, blk, now)

    def _emit_batch(self, gl, blk, now):
        geo = self.array.geo
        sched = self.sched
        lo = blk * geo.pages_per_block
        live = [lo + p for p in range(geo.pages_per_block)
                if self.array.valid[lo + p]]
        movers = []
        for src in live:
            rlpn = self.mapping.reverse[src]
            lpn, tidx = (rlpn, None) if rlpn >= 0 else (None, rlpn_tpage(rlpn))
            if self.use_copyback:
                io = sched.new_io("GC", "COPYBACK", lpn=lpn, tidx=tidx,
                                  src_ppa=src, force_lun=gl,
                                  stream=GC_STREAM, now=now)
                movers.append(io)
            else:
                rd = sched.new_io("GC", "READ", lpn=lpn, tidx=tidx,
                                  src_ppa=src, ppa=src, now=now)
                pr = sched.new_io("GC", "WRITE", lpn=lpn, tidx=tidx,
                                  src_ppa=src, force_lun=gl,
                                  stream=GC_STREAM, now=now,
                                  preds=(rd,))
                rd.paired = pr
                movers.append(rd)
                movers.append(pr)
        erase = sched.new_io("GC", "ERASE", ppa=lo, now=now, preds=movers)
        erase.gc_lun = gl
        for io in movers:
            sched.admit(io)
        sched.admit(erase)
        self.migrations += len(live)

    def erase_done(self, gl):
        self.active.pop(gl, None)


class WearLeveler:
    """Static wear leveling driven off the app write stream.

    Every `scan_every` completed app writes, look for a full block that is
    both under-erased (below the device mean) and stale (not erased for
    `staleness` times the device's average erase interval). Its live data
    is rewritten elsewhere as cold and the block is recycled. Until two
    real erases exist the interval estimate is seeded pessimistically so
    a fresh device never wear-levels.
    """

    SCAN_EVERY = 1024

    def __init__(self, array, mapping, alloc, staleness, enabled):
        self.array = array
        self.mapping = mapping
        self.alloc = alloc
        self.staleness = staleness
        self.enabled = enabled
        self.sched = None
        self.active = set()        # blocks mid-migration
        self.writes = 0
        self.migrations = 0

    def avg_erase_interval(self):
        n = self.array.erase_events
        if n < 2:
            return self.array.timing.t_erase * 1000
        return (self.array.last_erase_at - self.array.first_erase_at) // (n - 1)

    def on_app_write(self, now, gc_active=()):
        if not self.enabled:
            return
        self.writes += 1
        if self.writes % self.SCAN_EVERY == 0:
            self._scan(now, gc_active)

    def _scan(self, now, gc_active):
        arr = self.array
        mean = sum(arr.block_erases) / len(arr.block_erases)
        horizon = self.staleness * self.avg_erase_interval()
        state = arr.block_state
        inflight = arr.block_inflight
        erases = arr.block_erases
        last = arr.block_last_erase
        busy = self.active | set(gc_active)
        best = -1
        best_key = None
        for blk in range(arr.geo.total_blocks):
            if state[blk] != B_FULL or inflight[blk] or blk in busy:
                continue
            if erases[blk] >= mean:
                continue
            if now - last[blk] <= horizon:
                continue
            key = (erases[blk], blk)
            if best < 0 or key < best_key:
                best, best_key = blk, key
        if best >= 0:
            self.active.add(best)
            self._emit_batch(best, now)

    def _emit_batch(self, blk, now):
        geo = self.array.geo
        sched = self.sched
        lo = blk * geo.pages_per_block
        live = [lo + p for p in range(geo.pages_per_block)
                if self.array.valid[lo + p]]
        movers = []
        for src in live:
            rlpn = self.mapping.reverse[src]
            lpn, tidx = (rlpn, None) if rlpn >= 0 else (None, rlpn_tpage(rlpn))
            rd = sched.new_io("WL", "READ", lpn=lpn, tidx=tidx,
                              src_ppa=src, ppa=src, now=now)
            pr = sched.new_io("WL", "WRITE", lpn=lpn, tidx=tidx,
                              src_ppa=src, stream=COLD, now=now, preds=(rd,))
            rd.paired = pr
            movers.append(rd)
            movers.append(pr)
        erase = sched.new_io("WL", "ERASE", ppa=lo, now=now, preds=movers)
        erase.wl_block = blk
        for io in movers:
            sched.admit(io)
        sched.admit(erase)
        self.migrations += len(live)

    def erase_done(self, blk):
        self.active.discard(blk)
