"""Flash array model: geometry, command timing, channel and LUN occupancy,
and physical page state.

A command holds its LUN from start to completion. The channel is held only
during command and data-transfer phases (interleaving on), or for the whole
command (interleaving off). Every channel phase is reserved when the command
starts, so a command either starts now with a fixed completion time or does
not start at all; nothing shifts later. That keeps completion times known
at dispatch and the whole schedule reproducible.

Physical addresses are flat ints:
    ppa = ((global_lun * blocks_per_lun) + block) * pages_per_block + page
"""

from .errors import ModelViolation

READ = "READ"
PROGRAM = "PROGRAM"
ERASE = "ERASE"
COPYBACK = "COPYBACK"
TRIM = "TRIM"

# block allocation states
B_FREE = 0
B_OPEN = 1
B_FULL = 2

NO_TAG = -1


class Geometry:
    __slots__ = (
        "channels", "luns_per_channel", "blocks_per_lun",
        "pages_per_block", "page_size", "total_luns", "pages_per_lun",
        "total_blocks", "total_pages",
    )

    def __init__(self, channels, luns_per_channel, blocks_per_lun,
                 pages_per_block, page_size):
        self.channels = channels
        self.luns_per_channel = luns_per_channel
        self.blocks_per_lun = blocks_per_lun
        self.pages_per_block = pages_per_block
        self.page_size = page_size
        self.total_luns = channels * luns_per_channel
        self.pages_per_lun = blocks_per_lun * pages_per_block
        self.total_blocks = self.total_luns * blocks_per_lun
        self.total_pages = self.total_luns * self.pages_per_lun

    @classmethod
    def from_config(cls, hw):
        return cls(hw["channels"], hw["luns_per_channel"],
                   hw["blocks_per_lun"], hw["pages_per_block"],
                   hw["page_size"])

    def lun_of(self, ppa):
        return ppa // self.pages_per_lun

    def block_of(self, ppa):
        return ppa // self.pages_per_block

    def page_of(self, ppa):
        return ppa % self.pages_per_block

    def channel_of_lun(self, gl):
        return gl // self.luns_per_channel

    def ppa(self, gl, block, page):
        return (gl * self.blocks_per_lun + block) * self.pages_per_block + page

    def fmt_ppa(self, ppa):
        gl, rest = divmod(ppa, self.pages_per_lun)
        block, page = divmod(rest, self.pages_per_block)
        ch, lun = divmod(gl, self.luns_per_channel)
        return f"{ch}.{lun}.{block}.{page}"


class TimingProfile:
    """Per-command-kind latencies in nanoseconds.

    MLC programs alternate: even pages in a block take t_prog_fast, odd
    pages t_prog_slow. SLC always programs at t_prog_fast.
    """

    __slots__ = ("t_cmd", "t_data", "t_read", "t_prog_fast", "t_prog_slow",
                 "t_erase", "mlc")

    def __init__(self, hw):
        self.t_cmd = hw["t_cmd"]
        self.t_data = hw["t_data"]
        self.t_read = hw["t_read"]
        self.t_prog_fast = hw["t_prog_fast"]
        self.t_prog_slow = hw["t_prog_slow"]
        self.t_erase = hw["t_erase"]
        self.mlc = hw["cell_type"] == "mlc"

    def prog_time(self, page):
        if self.mlc and page & 1:
            return self.t_prog_slow
        return self.t_prog_fast


class ChannelState:
    """Reserved bus intervals, sorted by start, pruned as time passes."""

    __slots__ = ("resv",)

    def __init__(self):
        self.resv = []

    def prune(self, now):
        resv = self.resv
        if resv and resv[0][1] <= now:
            self.resv = [iv for iv in resv if iv[1] > now]

    def fits(self, intervals):
        for s, e in intervals:
            for rs, re in self.resv:
                if s < re and rs < e:
                    return False
        return True

    def reserve(self, intervals):
        self.resv.extend(intervals)
        self.resv.sort()


class LunState:
    __slots__ = ("busy_until", "cur_kind", "xfer_end", "pipelined")

    def __init__(self):
        self.busy_until = 0
        self.cur_kind = None
        self.xfer_end = 0
        self.pipelined = False


class FlashArray:
    """Physical state plus the resource calendar for every channel and LUN.

    start_* methods reserve resources and advance write pointers; apply_*
    methods run at the command's completion instant and flip the durable
    state (valid bits, erase counts, stored tags). Page payloads are just
    64-bit tags so integrity checks can verify what a read returns without
    simulating data.
    """

    def __init__(self, geo, timing, interleaving=True,
                 copyback_ok=True, pipelined_program=False):
        self.geo = geo
        self.timing = timing
        self.interleaving = interleaving
        self.copyback_ok = copyback_ok
        self.pipelined_program = pipelined_program

        self.channels = [ChannelState() for _ in range(geo.channels)]
        self.luns = [LunState() for _ in range(geo.total_luns)]

        # plain lists: this state is only ever touched one page or block
        # at a time, on the hottest path in the simulator
        self.tags = [NO_TAG] * geo.total_pages
        self.valid = bytearray(geo.total_pages)
        self.block_valid = [0] * geo.total_blocks
        self.block_erases = [0] * geo.total_blocks
        self.block_last_erase = [0] * geo.total_blocks
        self.block_next_page = [0] * geo.total_blocks
        self.block_inflight = [0] * geo.total_blocks
        self.block_state = [B_FREE] * geo.total_blocks
        self.free_blocks = [geo.blocks_per_lun] * geo.total_luns
        # unprogrammed pages in free + open blocks, kept per LUN so the
        # allocator can rank LUNs without walking blocks
        self.lun_avail = [geo.blocks_per_lun * geo.pages_per_block] \
            * geo.total_luns

        # device-wide erase history, for wear-interval estimates
        self.erase_events = 0
        self.first_erase_at = 0
        self.last_erase_at = 0

        # bumped on every start(); lets dispatch memoize resource probes
        self.gen = 0
        # last successful can_start plan; _plan is pure in (kind, ppa, now)
        # so start() may reuse the intervals whenever the key matches
        self._probe = None

        # hot-path divisors, resolved once
        self._ppl = geo.pages_per_lun
        self._ppc = geo.pages_per_lun * geo.luns_per_channel

    # ---- phase planning ------------------------------------------------

    def _plan(self, kind, ppa, start):
        """Completion time and channel intervals for a command starting
        at `start`. Pure; reserves nothing."""
        t = self.timing
        if kind == READ:
            comp = start + t.t_cmd + t.t_read + t.t_data
            ch = [(start, start + t.t_cmd), (comp - t.t_data, comp)]
        elif kind == PROGRAM:
            comp = start + t.t_cmd + t.t_data + t.prog_time(self.geo.page_of(ppa))
            ch = [(start, start + t.t_cmd + t.t_data)]
        elif kind == ERASE:
            comp = start + t.t_cmd + t.t_erase
            ch = [(start, start + t.t_cmd)]
        elif kind == COPYBACK:
            comp = start + t.t_cmd + t.t_read + t.prog_time(self.geo.page_of(ppa))
            ch = [(start, start + t.t_cmd)]
        elif kind == TRIM:
            comp = start + t.t_cmd
            ch = [(start, comp)]
        else:
            raise ModelViolation(f"unknown command kind {kind}")
        if not self.interleaving:
            ch = [(start, comp)]
        return comp, ch

    def channel_for(self, kind, ppa):
        if ppa < 0:
            return 0  # targetless trim still costs a command cycle
        return self.geo.channel_of_lun(self.geo.lun_of(ppa))

    def lun_startable(self, gl, now):
        lun = self.luns[gl]
        if now >= lun.busy_until:
            return True
        # one-deep program pipelining: next program may enter once the
        # current one has left the bus and is busy in the cells
        return (self.pipelined_program and lun.cur_kind == PROGRAM
                and not lun.pipelined and now >= lun.xfer_end)

    def can_start(self, kind, ppa, now):
        """Completion time if the command can start exactly now, else None."""
        if kind != TRIM:
            gl = ppa // self._ppl
            lun = self.luns[gl]
            if now < lun.busy_until:
                if not (kind == PROGRAM and self.pipelined_program
                        and lun.cur_kind == PROGRAM and not lun.pipelined
                        and now >= lun.xfer_end):
                    return None
        comp, ch_iv = self._plan(kind, ppa, now)
        chan = self.channels[ppa // self._ppc if ppa >= 0 else 0]
        chan.prune(now)
        if not chan.fits(ch_iv):
            return None
        if kind == PROGRAM and ppa >= 0:
            lun = self.luns[ppa // self._ppl]
            if now < lun.busy_until:
                comp = max(comp, lun.busy_until + self.timing.prog_time(
                    self.geo.page_of(ppa)))
        self._probe = (kind, ppa, now, ch_iv)
        return comp

    def next_boundary(self, now):
        """Earliest future instant at which any resource frees up. Used to
        schedule dispatch retries; None when everything is already idle."""
        best = None
        for chan in self.channels:
            for _, e in chan.resv:
                if e > now and (best is None or e < best):
                    best = e
        pipelined = self.pipelined_program
        for lun in self.luns:
            bu = lun.busy_until
            if bu > now and (best is None or bu < best):
                best = bu
            if pipelined:
                xe = lun.xfer_end
                if xe > now and (best is None or xe < best):
                    best = xe
        return best

    # ---- command start (reserves resources, advances write pointers) ---

    def start(self, kind, ppa, now, src=None, comp=None):
        """Reserve resources and begin a command. Pass `comp` from a
        just-made can_start probe to skip revalidating; state must not
        have changed in between."""
        if comp is None:
            comp = self.can_start(kind, ppa, now)
            if comp is None:
                raise ModelViolation(
                    f"{kind} at {self.geo.fmt_ppa(ppa) if ppa >= 0 else '-'} "
                    f"cannot start at t={now}")

        # model-rule guards run before anything mutates so a refused
        # command leaves no reservation behind
        if kind == READ:
            if not self.valid[ppa]:
                raise ModelViolation(
                    f"read of invalid page {self.geo.fmt_ppa(ppa)}")
        elif kind == PROGRAM or kind == COPYBACK:
            blk = self.geo.block_of(ppa)
            if self.block_state[blk] != B_OPEN:
                raise ModelViolation(
                    f"program into non-open block {blk}")
            page = self.geo.page_of(ppa)
            if page != self.block_next_page[blk]:
                raise ModelViolation(
                    f"out-of-order program: page {page} in block {blk}, "
                    f"expected {self.block_next_page[blk]}")
            if kind == COPYBACK:
                if not self.copyback_ok:
                    raise ModelViolation("copyback disabled on this device")
                if src is None or self.geo.lun_of(src) != self.geo.lun_of(
                        ppa):
                    raise ModelViolation("copyback must stay inside one LUN")
                if not self.valid[src]:
                    raise ModelViolation(
                        f"copyback from invalid page {self.geo.fmt_ppa(src)}")
        elif kind == ERASE:
            blk = self.geo.block_of(ppa)
            if self.block_valid[blk] != 0:
                raise ModelViolation(
                    f"erase of block {blk} with {self.block_valid[blk]} "
                    f"valid pages")
            if self.block_inflight[blk] != 0:
                raise ModelViolation(
                    f"erase of block {blk} with programs in flight")
            if self.block_state[blk] != B_FULL:
                raise ModelViolation(f"erase of non-full block {blk}")

        p = self._probe
        if p is not None and p[0] == kind and p[1] == ppa and p[2] == now:
            ch_iv = p[3]
        else:
            _, ch_iv = self._plan(kind, ppa, now)
        if not self.interleaving:
            ch_iv = [(now, comp)]
        self.channels[ppa // self._ppc if ppa >= 0 else 0].reserve(ch_iv)
        self.gen += 1

        if kind == TRIM:
            return comp

        gl = self.geo.lun_of(ppa)
        lun = self.luns[gl]
        if now < lun.busy_until:  # pipelined program slot
            lun.pipelined = True
        lun.busy_until = comp
        lun.cur_kind = kind
        lun.xfer_end = ch_iv[0][1] if kind in (PROGRAM, READ) else comp

        if kind == PROGRAM or kind == COPYBACK:
            blk = self.geo.block_of(ppa)
            page = self.geo.page_of(ppa)
            self.block_next_page[blk] = page + 1
            self.block_inflight[blk] += 1
            self.lun_avail[gl] -= 1
            if page + 1 == self.geo.pages_per_block:
                self.block_state[blk] = B_FULL
        return comp

    # ---- completion effects --------------------------------------------

    def apply_program(self, ppa, tag, now):
        blk = self.geo.block_of(ppa)
        self.tags[ppa] = tag
        self.valid[ppa] = 1
        self.block_valid[blk] += 1
        self.block_inflight[blk] -= 1
        lun = self.luns[self.geo.lun_of(ppa)]
        if lun.pipelined:
            lun.pipelined = False

    def apply_copyback(self, dst, tag, now):
        self.apply_program(dst, tag, now)

    def apply_erase(self, ppa, now):
        blk = self.geo.block_of(ppa)
        self.block_erases[blk] += 1
        self.block_last_erase[blk] = now
        self.block_state[blk] = B_FREE
        self.block_next_page[blk] = 0
        ppb = self.geo.pages_per_block
        lo = blk * ppb
        self.tags[lo:lo + ppb] = [NO_TAG] * ppb
        gl = blk // self.geo.blocks_per_lun
        self.free_blocks[gl] += 1
        self.lun_avail[gl] += ppb
        self.erase_events += 1
        if self.erase_events == 1:
            self.first_erase_at = now
        self.last_erase_at = now

    # ---- state queries and edits used by the mapping layer --------------

    def read_tag(self, ppa):
        if not self.valid[ppa]:
            raise ModelViolation(
                f"tag read of invalid page {self.geo.fmt_ppa(ppa)}")
        return self.tags[ppa]

    def invalidate(self, ppa):
        if not self.valid[ppa]:
            raise ModelViolation(
                f"double invalidate of {self.geo.fmt_ppa(ppa)}")
        self.valid[ppa] = 0
        self.block_valid[self.geo.block_of(ppa)] -= 1

    def open_block(self, blk):
        if self.block_state[blk] != B_FREE:
            raise ModelViolation(f"open of non-free block {blk}")
        self.block_state[blk] = B_OPEN
        self.free_blocks[blk // self.geo.blocks_per_lun] -= 1
