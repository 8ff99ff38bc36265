import pytest

from secnpu.dataflow import LayerSpec, Role, TileSchedule, generate_trace
from secnpu.layout import (
    PAGE_BYTES,
    PIXELS_PER_BLOCK,
    WEIGHT_FMAP,
    LayoutError,
    NetworkLayout,
    input_shape,
    pixel_to_block_runs,
    region_runs,
)
from secnpu.tables import LayerKind


def _layout(net):
    return NetworkLayout(net.pairs())


def test_regions_are_page_aligned_and_disjoint(tiny_net):
    lay = _layout(tiny_net)
    regions = sorted(lay.regions())
    for base, size in regions:
        assert base % PAGE_BYTES == 0 and size % PAGE_BYTES == 0
    for (b0, s0), (b1, _) in zip(regions, regions[1:]):
        assert b0 + s0 <= b1
    assert lay.input.layer == 0
    assert [p.ofmap.layer for p in lay.layers] == [1, 2, 3, 4]


def test_tensor_refs_use_channel_as_fmap(tiny_net):
    t = _layout(tiny_net).layers[0].ofmap   # 4 x 8 x 16
    assert t.channel_blocks == 8
    r = t.ref(9)
    assert (r.layer, r.fmap, r.index) == (1, 1, 1)
    assert r.addr == t.base + 9 * 64
    w = _layout(tiny_net).layers[0].weight
    assert w.ref(0).fmap == WEIGHT_FMAP
    with pytest.raises(LayoutError):
        t.ref(t.n_blocks)


def _box_pixels(pl, ev):
    """Brute-force pixel set of a tile, straight from its coordinates."""
    from secnpu.dataflow import role_dims
    dims = role_dims(pl.layer.kind)[ev.tile.role]
    shape = pl.ofmap.shape if ev.tile.role is Role.OFMAP else input_shape(pl.layer)
    coords = (ev.tile.channel, ev.tile.row_tile, ev.tile.col_tile)
    ranges = []
    for axis, (d, i) in enumerate(zip(dims, coords)):
        if d:
            t = pl.schedule.tile(d)
            ranges.append(range(i * t, (i + 1) * t))
        else:
            ranges.append(range(shape[axis]))
    _, rows, cols = shape
    return {(c * rows + r) * cols + x for c in ranges[0] for r in ranges[1] for x in ranges[2]}


def test_runs_match_pixel_enumeration(tiny_net):
    lay = _layout(tiny_net)
    for pl in lay.layers:
        for ev in generate_trace(pl.layer, pl.schedule):
            if ev.tile.role is Role.WEIGHT:
                continue
            got = {b for b in pl.blocks(ev)}
            tensor = pl.ofmap if ev.tile.role is Role.OFMAP else pl.ifmap
            want = {tensor.ref(p // PIXELS_PER_BLOCK) for p in _box_pixels(pl, ev)}
            assert got == want


def test_weight_tiles_partition_weight_tensor(tiny_net):
    pl = _layout(tiny_net).layers[1]
    seen = set()
    for ev in generate_trace(pl.layer, pl.schedule).select(Role.WEIGHT):
        seen.update(b.addr for b in pl.blocks(ev))
    assert seen == {r.addr for r in pl.weight.refs()}


def test_halo_rows_and_sides_clipped():
    layer = LayerSpec(LayerKind.CONVOLUTION, 1, 1, 8, 64, 3, 3)
    sched = TileSchedule.for_row("conv-or-2", K_T=1, C_T=1, H_T=4, W_T=32)
    from secnpu.network import single_layer
    pl = NetworkLayout(single_layer(layer, sched).pairs()).layers[0]
    reads = [e for e in generate_trace(layer, sched).select(Role.IFMAP)]
    by_tile = {(e.tile.row_tile, e.tile.col_tile): e for e in reads}
    # top-left tile: one row below (2 blocks), one side block on rows 0..4
    tl = pl.halo_runs(by_tile[(0, 0)])
    assert sum(n for _, _, n in tl) == 2 + 5
    # bottom-right tile: one row above, left side only
    br = pl.halo_runs(by_tile[(1, 1)])
    assert sum(n for _, _, n in br) == 2 + 5
    tile_blocks = {b for _, s, n in pl.runs(by_tile[(0, 0)]) for b in range(s, s + n)}
    halo = {b for _, s, n in tl for b in range(s, s + n)}
    assert not tile_blocks & halo
    assert all(0 <= b < pl.ifmap.n_blocks for b in halo)


def test_no_halo_for_pointwise_or_writes(tiny_net):
    lay = _layout(tiny_net)
    pl2 = lay.layers[1]   # 1x1 conv
    assert all(pl2.halo_blocks(e) == 0 for e in generate_trace(pl2.layer, pl2.schedule))
    pl1 = lay.layers[0]
    writes = [e for e in generate_trace(pl1.layer, pl1.schedule) if not e.is_read]
    assert all(pl1.halo_blocks(e) == 0 for e in writes)


def test_region_runs_merge_and_alignment():
    assert region_runs((2, 2, 16), range(2), range(2), range(16)) == [(0, 64)]
    assert region_runs((1, 2, 32), range(1), range(2), range(16)) == [(0, 16), (32, 16)]
    assert pixel_to_block_runs([(32, 16)], "x") == [(2, 1)]
    with pytest.raises(LayoutError):
        pixel_to_block_runs([(8, 16)], "x")


def test_misaligned_tile_rejected():
    layer = LayerSpec(LayerKind.CONVOLUTION, 1, 1, 4, 32)
    sched = TileSchedule.for_row("conv-or-2", K_T=1, C_T=1, H_T=1, W_T=8)
    from secnpu.network import single_layer
    pl = NetworkLayout(single_layer(layer, sched).pairs()).layers[0]
    with pytest.raises(LayoutError, match="not aligned"):
        for ev in generate_trace(layer, sched):
            pl.runs(ev)


def test_pixel_count_chain_checked():
    a = LayerSpec(LayerKind.CONVOLUTION, 2, 1, 4, 16, layer_id=1)
    b = LayerSpec(LayerKind.CONVOLUTION, 2, 4, 4, 16, layer_id=2)
    s = TileSchedule.for_row("conv-or-2", K_T=2, C_T=1, H_T=4, W_T=16)
    s2 = TileSchedule.for_row("conv-or-2", K_T=2, C_T=4, H_T=4, W_T=16)
    with pytest.raises(LayoutError, match="producer"):
        NetworkLayout([(a, s), (b, s2)])
    with pytest.raises(LayoutError):
        NetworkLayout([])
