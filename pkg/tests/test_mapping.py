"""Mapping layer: page table semantics, DFTL cache costs, block allocator."""

import pytest

import flashsim.hardware as hw
import flashsim.mapping as mp
from flashsim.errors import ConfigError, ModelViolation

from helpers import small_array, small_cfg


def program(arr, ppa, t):
    blk = arr.geo.block_of(ppa)
    if arr.block_state[blk] == hw.B_FREE:
        arr.open_block(blk)
    comp = arr.start(hw.PROGRAM, ppa, t)
    arr.apply_program(ppa, ppa, comp)
    return comp


def test_pagemap_bind_trim_rebind():
    geo = small_array().geo
    pm = mp.PageTableMap(geo, 768, ram_bytes=1 << 20)
    assert pm.current(5) == mp.UNMAPPED
    assert pm.read_lookup(5) == (mp.UNMAPPED, ())
    assert pm.write_prepare(5) == ()

    assert pm.bind(5, 100) == (mp.UNMAPPED, ())
    assert pm.current(5) == 100
    assert pm.reverse[100] == 5

    old, side = pm.bind(5, 200)
    assert old == 100 and side == ()

    # a migration that lost to the overwrite above must not move the map
    assert pm.rebind(5, 100, 300) is False
    assert pm.current(5) == 200
    assert pm.rebind(5, 200, 300) is True
    assert pm.current(5) == 300
    assert pm.reverse[300] == 5

    assert pm.trim(5) == (300, ())
    assert pm.current(5) == mp.UNMAPPED
    assert pm.ram_report() == {"table_bytes": 8 * 768}


def test_pagemap_refuses_to_exceed_ram():
    geo = small_array().geo
    with pytest.raises(ConfigError):
        mp.PageTableMap(geo, 768, ram_bytes=768 * 8 - 1)


def test_dftl_miss_hit_and_eviction_costs():
    geo = small_array().geo  # 4096B pages -> 512 entries per tpage
    d = mp.DftlMap(geo, 768, ram_bytes=1 << 20, cmt_capacity=2)
    assert d.entries_per_tpage == 512
    assert d.n_tpages == 2
    assert d.tidx_of(511) == 0 and d.tidx_of(512) == 1

    # misses are free while the translation pages only exist in RAM
    assert d.read_lookup(0) == (mp.UNMAPPED, ())
    assert d.write_prepare(1) == ()
    # cache full; evicting the clean entry for lpn 0 costs nothing
    assert d.write_prepare(2) == ()
    # evicting a dirty entry flushes its tpage; none written yet, so no read
    assert d.write_prepare(3) == (("twrite", 0),)

    # once tpage 0 lives in flash, dirty evictions read-modify-write it
    # and misses under it pay the read
    d.tpage_bind(0, 700)
    assert d.reverse[700] == mp.tpage_rlpn(0)
    assert mp.rlpn_tpage(d.reverse[700]) == 0
    lpn600, ios = d.read_lookup(600)  # tidx 1, evicts dirty lpn 2
    assert lpn600 == mp.UNMAPPED
    assert ios == (("tread", 0), ("twrite", 0))
    # hit: no flash traffic
    assert d.read_lookup(3) == (mp.UNMAPPED, ())


def test_dftl_bind_and_trim_cache_interaction():
    geo = small_array().geo
    d = mp.DftlMap(geo, 768, ram_bytes=1 << 20, cmt_capacity=1)
    d.tpage_bind(0, 900)

    assert d.write_prepare(10) == (("tread", 0),)
    old, ios = d.bind(10, 50)
    assert old == mp.UNMAPPED and ios == ()
    assert d.current(10) == 50

    # binding an lpn whose entry was evicted mid-flight refetches it,
    # flushing the dirty occupant first
    old, ios = d.bind(11, 51)
    assert old == mp.UNMAPPED
    assert ios == (("tread", 0), ("twrite", 0), ("tread", 0))
    assert d.current(11) == 51

    assert d.trim(11) == (51, ())
    assert d.current(11) == mp.UNMAPPED
    # trimming an already-unmapped lpn is free
    assert d.trim(11) == (mp.UNMAPPED, ())

    rep = d.ram_report()
    assert rep == {"cmt_bytes": 16, "directory_bytes": 8 * 2}


def test_dftl_tpage_rebind_race():
    geo = small_array().geo
    d = mp.DftlMap(geo, 768, ram_bytes=1 << 20, cmt_capacity=2)
    assert d.tpage_bind(1, 400) == mp.UNMAPPED
    assert d.tpage_bind(1, 410) == 400
    assert d.tpage_rebind(1, 400, 420) is False
    assert d.tpage_current(1) == 410
    assert d.tpage_rebind(1, 410, 420) is True
    assert d.tpage_current(1) == 420
    assert d.reverse[420] == mp.tpage_rlpn(1)


def test_dftl_refuses_to_exceed_ram():
    geo = small_array().geo
    with pytest.raises(ConfigError):
        mp.DftlMap(geo, 768, ram_bytes=16, cmt_capacity=4)


def test_build_mapping_sizes_logical_space():
    cfg = small_cfg()  # 1024 physical pages, 0.25 overprovision
    geo = small_array().geo
    m = mp.build_mapping(cfg, geo)
    assert isinstance(m, mp.PageTableMap) and not isinstance(m, mp.DftlMap)
    assert m.logical_pages == 768

    cfg["controller"]["mapping"] = "dftl"
    cfg["controller"]["cmt_capacity"] = 64
    d = mp.build_mapping(cfg, geo)
    assert isinstance(d, mp.DftlMap)
    assert d.logical_pages == 768 and d.cmt_capacity == 64


def test_allocator_stream_stickiness():
    arr = small_array()
    alloc = mp.BlockAllocator(arr)
    assert [alloc.free_pages(gl) for gl in range(4)] == [256] * 4
    assert alloc.lun_order([0, 1, 2, 3]) == [0, 1, 2, 3]

    c = alloc.choose(mp.COLD, None, {1})
    assert c.gl == 1 and c.page == 0 and c.open_new
    ppa = alloc.commit(c)
    assert ppa == c.blk * 16
    t = program(arr, ppa, 0)

    # same stream continues in the open block at the write pointer
    c2 = alloc.choose(mp.COLD, None, {1})
    assert (c2.blk, c2.page, c2.open_new) == (c.blk, 1, False)
    # a busier LUN sorts to the back of the placement order
    assert alloc.lun_order([0, 1, 2, 3]) == [0, 2, 3, 1]
    # other LUNs get their own block
    c_other = alloc.choose(mp.COLD, None, {0})
    assert c_other.gl == 0 and c_other.open_new

    for page in range(1, 16):
        ci = alloc.choose(mp.COLD, None, {1})
        assert ci.blk == c.blk and ci.page == page
        t = program(arr, alloc.commit(ci), t)
    assert arr.block_state[c.blk] == hw.B_FULL
    # full block leaves the stream table; next choice opens a new one
    c3 = alloc.choose(mp.COLD, None, {1})
    assert c3.open_new and c3.blk != c.blk

    stale = mp.Choice(c3.gl, c3.blk, c3.page + 1, c3.open_new, c3.key)
    with pytest.raises(ModelViolation):
        alloc.commit(stale)


def test_allocator_wear_picks_and_gc_reserve():
    arr = small_array()
    alloc = mp.BlockAllocator(arr)
    arr.block_erases[0] = 5
    arr.block_erases[1] = 1
    arr.block_erases[2] = 9
    # hot data goes to the youngest free block, cold to the oldest
    assert alloc.choose(mp.HOT, None, {0}).blk == 3
    assert alloc.choose(mp.COLD, None, {0}).blk == 2

    # leave exactly one free block in LUN 3: app writes must back off,
    # cleaning traffic may still take it
    for blk in range(48, 63):
        arr.open_block(blk)
    assert arr.free_blocks[3] == 1
    assert alloc.choose(mp.COLD, None, {3}) is None
    rescue = alloc.choose(mp.COLD, None, {3}, for_gc=True)
    assert rescue is not None and rescue.blk == 63
    assert alloc.choose_in_lun(3, mp.COLD, for_gc=True).blk == 63

    assert alloc.any_space() is True
    for gl in (0, 1, 2):
        for blk in range(gl * 16, gl * 16 + 15):
            if arr.block_state[blk] == hw.B_FREE:
                arr.open_block(blk)
    assert alloc.any_space() is False
    assert alloc.any_space(for_gc=True) is True


def test_allocator_locality_groups_pin_one_block():
    arr = small_array()
    alloc = mp.BlockAllocator(arr)
    everywhere = {0, 1, 2, 3}

    c = alloc.choose(mp.COLD, 7, everywhere)
    assert c.open_new and c.key == ("g", 7)
    t = program(arr, alloc.commit(c), 0)

    # the group sticks to its block whatever the temperature says
    c2 = alloc.choose(mp.HOT, 7, everywhere)
    assert (c2.blk, c2.page, c2.open_new) == (c.blk, 1, False)
    # pinned LUN busy: wait rather than scatter the group
    assert alloc.choose(mp.COLD, 7, everywhere - {c.gl}) is None
    # ungrouped traffic in the same LUN opens its own block
    c3 = alloc.choose(mp.COLD, None, {c.gl})
    assert c3.blk != c.blk
