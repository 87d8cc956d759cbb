"""Logical-to-physical mapping and write placement.

Two mapping schemes share one authoritative table. The page-table scheme
keeps the whole table in controller RAM. The demand-paged scheme keeps a
bounded cache (CMT) of recently used entries backed by translation pages
stored in flash; cache misses and dirty evictions surface as descriptors
for extra flash IOs that the scheduler turns into MAPPING-class requests.
The full table is still kept as a shadow so data integrity never depends
on the cache bookkeeping being right; the cache only decides which extra
IOs the device pays for.

Write placement is split in two so the scheduler can ask "where would this
write go right now" without committing: choose() is a pure peek, commit()
applies it. Placement is decided at dispatch, never at submit, which keeps
programs strictly in page order inside every block.
"""

from collections import OrderedDict

from .errors import ConfigError, ModelViolation
from .hardware import B_FREE, B_OPEN

UNMAPPED = -1

COLD = 0
HOT = 1
# cleaning traffic gets its own write streams so app writes can never
# starve a migration batch out of its destination block
GC_STREAM = 2

# reverse-map encoding for translation pages: tidx <-> -(tidx + 2)
def tpage_rlpn(tidx):
    return -(tidx + 2)


def rlpn_tpage(rlpn):
    return -rlpn - 2


class Choice:
    """A write placement candidate: LUN, block, page, and whether taking
    it opens a fresh block (and under which stream key)."""

    __slots__ = ("gl", "blk", "page", "open_new", "key")

    def __init__(self, gl, blk, page, open_new, key):
        self.gl = gl
        self.blk = blk
        self.page = page
        self.open_new = open_new
        self.key = key


class BlockAllocator:
    """Per-LUN, per-stream open blocks.

    Streams are (lun, temperature) pairs, plus locality groups which pin
    all of a group's writes to one open block until it fills. Free-block
    picks do dynamic wear leveling: hot data goes to the least-erased free
    block, cold data to the most-erased, ties to the lowest index. The
    last free block of a LUN is reserved for garbage collection traffic so
    cleaning can always make progress.
    """

    def __init__(self, array):
        self.array = array
        self.geo = array.geo
        self.streams = {}   # (gl, temp) -> blk
        self.groups = {}    # group id -> blk

    def _stream_block(self, table, key):
        blk = table.get(key)
        if blk is None:
            return None
        if (self.array.block_state[blk] != B_OPEN
                or self.array.block_next_page[blk] >= self.geo.pages_per_block):
            del table[key]
            return None
        return blk

    def _pick_free(self, gl, temp):
        geo = self.geo
        lo = gl * geo.blocks_per_lun
        hi = lo + geo.blocks_per_lun
        state = self.array.block_state
        erases = self.array.block_erases
        best = -1
        best_er = None
        for blk in range(lo, hi):
            if state[blk] != B_FREE:
                continue
            er = erases[blk]
            if best < 0:
                best, best_er = blk, er
            elif temp == HOT:
                if er < best_er:
                    best, best_er = blk, er
            else:
                if er > best_er:
                    best, best_er = blk, er
        return best if best >= 0 else None

    def free_pages(self, gl):
        # the array keeps this current: every open block was opened by
        # commit() below, so free+open page counts never diverge from it
        return self.array.lun_avail[gl]

    def lun_order(self, luns):
        return sorted(luns, key=lambda gl: (-self.free_pages(gl), gl))

    def _choice_in_lun(self, gl, temp, for_gc):
        key = (gl, temp)
        blk = self._stream_block(self.streams, key)
        if blk is not None:
            return Choice(gl, blk, self.array.block_next_page[blk],
                          False, key)
        free = self.array.free_blocks[gl]
        if free <= 0 or (free == 1 and not for_gc):
            return None
        blk = self._pick_free(gl, temp)
        if blk is None:
            return None
        return Choice(gl, blk, 0, True, key)

    def choose(self, temp, group, startable, for_gc=False):
        """Best placement among the startable LUNs, or None. Pure."""
        if group is not None:
            blk = self._stream_block(self.groups, group)
            if blk is not None:
                gl = blk // self.geo.blocks_per_lun
                if gl not in startable:
                    return None  # pinned block's LUN is busy; wait
                return Choice(gl, blk, self.array.block_next_page[blk],
                              False, ("g", group))
            for gl in self.lun_order(startable):
                free = self.array.free_blocks[gl]
                if free <= 0 or (free == 1 and not for_gc):
                    continue
                blk = self._pick_free(gl, temp)
                if blk is not None:
                    return Choice(gl, blk, 0, True, ("g", group))
            return None
        for gl in self.lun_order(startable):
            c = self._choice_in_lun(gl, temp, for_gc)
            if c is not None:
                return c
        return None

    def choose_in_lun(self, gl, temp, for_gc=True):
        """Placement restricted to one LUN (copyback destinations)."""
        return self._choice_in_lun(gl, temp, for_gc)

    def commit(self, choice):
        """Apply a peeked placement; returns the target ppa."""
        if choice.open_new:
            self.array.open_block(choice.blk)
            if isinstance(choice.key, tuple) and choice.key[0] == "g":
                self.groups[choice.key[1]] = choice.blk
            else:
                self.streams[choice.key] = choice.blk
        ppa = choice.blk * self.geo.pages_per_block + choice.page
        expect = self.array.block_next_page[choice.blk]
        if choice.page != expect:
            raise ModelViolation(
                f"placement raced: block {choice.blk} page {choice.page} "
                f"vs pointer {expect}")
        return ppa

    def any_space(self, for_gc=False):
        for gl in range(self.geo.total_luns):
            if self._choice_in_lun(gl, COLD, for_gc) is not None:
                return True
        return False


class PageTableMap:
    """Full logical-to-physical table held in controller RAM."""

    name = "pagemap"

    def __init__(self, geo, logical_pages, ram_bytes):
        need = 8 * logical_pages
        if need > ram_bytes:
            raise ConfigError(
                f"mapping table needs {need} bytes but controller RAM is "
                f"{ram_bytes}; reduce the device or switch to dftl mapping")
        self.geo = geo
        self.logical_pages = logical_pages
        self.table = [UNMAPPED] * logical_pages
        self.reverse = [UNMAPPED] * geo.total_pages

    # side-IO hooks; the RAM-resident table never needs extra flash IOs
    def read_lookup(self, lpn):
        return self.table[lpn], ()

    def write_prepare(self, lpn):
        return ()

    def current(self, lpn):
        return self.table[lpn]

    def bind(self, lpn, ppa):
        """Point lpn at a freshly programmed page. Returns the old ppa
        (UNMAPPED if none) for the caller to invalidate, plus flash IO
        descriptors the bookkeeping cost model wants issued."""
        old = self.table[lpn]
        self.table[lpn] = ppa
        self.reverse[ppa] = lpn
        return old, ()

    def trim(self, lpn):
        old = self.table[lpn]
        self.table[lpn] = UNMAPPED
        return old, ()

    def rebind(self, lpn, old_ppa, new_ppa):
        """Migration commit: move the mapping only if it still points at
        the migrated page. Returns False when an overwrite won the race."""
        if self.table[lpn] != old_ppa:
            return False
        self.table[lpn] = new_ppa
        self.reverse[new_ppa] = lpn
        return True

    def ram_report(self):
        return {"table_bytes": 8 * self.logical_pages}


class DftlMap(PageTableMap):
    """Demand-paged mapping: bounded CMT over flash-resident translation
    pages. The inherited table acts as the authoritative shadow; this
    class adds the cost model (which lookups and evictions hit flash).

    Descriptors returned from lookup hooks:
        ("tread", tidx)   read translation page tidx
        ("twrite", tidx)  program an updated version of tidx
    A twrite directly after a tread of the same tidx updates in place
    (read, modify, write out of the new location).
    """

    name = "dftl"

    def __init__(self, geo, logical_pages, ram_bytes, cmt_capacity):
        super().__init__(geo, logical_pages, ram_bytes=8 * logical_pages)
        self.entries_per_tpage = geo.page_size // 8
        self.n_tpages = -(-logical_pages // self.entries_per_tpage)
        need = 16 * cmt_capacity + 8 * self.n_tpages
        if need > ram_bytes:
            raise ConfigError(
                f"CMT of {cmt_capacity} entries plus directory needs {need} "
                f"bytes but controller RAM is {ram_bytes}")
        self.cmt_capacity = cmt_capacity
        self.cmt = OrderedDict()  # lpn -> dirty
        self.gtd = [UNMAPPED] * self.n_tpages

    def tidx_of(self, lpn):
        return lpn // self.entries_per_tpage

    def _touch(self, lpn, dirty):
        """Bring lpn's entry into the CMT, returning flash IO descriptors
        for the miss fetch and any dirty eviction."""
        cmt = self.cmt
        if lpn in cmt:
            if dirty:
                cmt[lpn] = True
            cmt.move_to_end(lpn)
            return ()
        ios = []
        if len(cmt) >= self.cmt_capacity:
            old_lpn, old_dirty = cmt.popitem(last=False)
            if old_dirty:
                otidx = self.tidx_of(old_lpn)
                if self.gtd[otidx] != UNMAPPED:
                    ios.append(("tread", otidx))
                ios.append(("twrite", otidx))
        tidx = self.tidx_of(lpn)
        if self.gtd[tidx] != UNMAPPED:
            ios.append(("tread", tidx))
        cmt[lpn] = dirty
        return tuple(ios)

    def read_lookup(self, lpn):
        ios = self._touch(lpn, dirty=False)
        return self.table[lpn], ios

    def write_prepare(self, lpn):
        return self._touch(lpn, dirty=True)

    def bind(self, lpn, ppa):
        old, _ = super().bind(lpn, ppa)
        if lpn in self.cmt:
            self.cmt[lpn] = True
            self.cmt.move_to_end(lpn)
            return old, ()
        # entry was evicted while the program was in flight; bringing it
        # back may itself cost flash IOs
        return old, self._touch(lpn, dirty=True)

    def trim(self, lpn):
        old = self.table[lpn]
        self.table[lpn] = UNMAPPED
        ios = self._touch(lpn, dirty=True) if old != UNMAPPED else ()
        return old, ios

    # translation-page lifecycle -----------------------------------------

    def tpage_current(self, tidx):
        return self.gtd[tidx]

    def tpage_bind(self, tidx, ppa):
        old = self.gtd[tidx]
        self.gtd[tidx] = ppa
        self.reverse[ppa] = tpage_rlpn(tidx)
        return old

    def tpage_rebind(self, tidx, old_ppa, new_ppa):
        if self.gtd[tidx] != old_ppa:
            return False
        self.gtd[tidx] = new_ppa
        self.reverse[new_ppa] = tpage_rlpn(tidx)
        return True

    def ram_report(self):
        return {
            "cmt_bytes": 16 * self.cmt_capacity,
            "directory_bytes": 8 * self.n_tpages,
        }


def build_mapping(cfg, geo):
    ctl = cfg["controller"]
    # tiny epsilon so exact products (e.g. 0.3 overprovision on round
    # device sizes) do not floor one page short
    logical = int(geo.total_pages * (1.0 - ctl["overprovision"]) + 1e-6)
    if ctl["mapping"] == "pagemap":
        return PageTableMap(geo, logical, cfg["hardware"]["ram_bytes"])
    return DftlMap(geo, logical, cfg["hardware"]["ram_bytes"],
                   ctl["cmt_capacity"])
