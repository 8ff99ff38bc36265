import io

import pytest

from secnpu.dataflow import (
    Direction,
    GlobalBuffer,
    InvalidSchedule,
    LayerSpec,
    NonDivisibleTiling,
    Role,
    ShrinkNotAllowed,
    TileSchedule,
    UnknownRow,
    UnsupportedCombination,
    accumulates_in_buffer,
    alphas,
    enumerate_table_rows,
    generate_trace,
    loop_ranges,
    pad_to_divisible,
    read_trace_csv,
    resolve_row,
    tiles_in_layer,
    widen_layer,
    write_trace_csv,
)
from secnpu.tables import BY_ID, ROWS, eval_alpha


def _compact(trace):
    return [(e.tile.role.value[0], e.tile.channel, e.direction.value) for e in trace.events]


def test_input_reuse_trace_by_hand():
    # h_T > w_T > c > k_T with a single spatial tile, C=2, K=2
    layer = LayerSpec("conv", K=2, C=2, H=1, W=1)
    tr = generate_trace(layer, TileSchedule.for_row("conv-ir-1"))
    assert _compact(tr) == [
        ("i", 0, "R"), ("w", 0, "R"), ("o", 0, "W"),
        ("w", 1, "R"), ("o", 1, "W"),
        ("i", 1, "R"), ("w", 0, "R"), ("o", 0, "R"), ("o", 0, "W"),
        ("w", 1, "R"), ("o", 1, "R"), ("o", 1, "W"),
    ]
    assert [e.last_write for e in tr.events if e.direction is Direction.WRITE] == [False, False, True, True]


def test_output_reuse_accumulates():
    # reduction innermost: each ofmap tile written exactly once, on eviction
    layer = LayerSpec("conv", K=2, C=3, H=1, W=1)
    tr = generate_trace(layer, TileSchedule.for_row("conv-or-1"))
    writes = tr.select(Role.OFMAP, Direction.WRITE)
    assert [w.tile.channel for w in writes] == [0, 1]
    assert not tr.select(Role.OFMAP, Direction.READ)
    assert all(w.last_write for w in writes)


def test_accumulation_rule():
    assert accumulates_in_buffer(BY_ID["conv-or-1"])
    assert accumulates_in_buffer(BY_ID["mm-3"])
    assert not accumulates_in_buffer(BY_ID["conv-ir-1"])
    assert not accumulates_in_buffer(BY_ID["conv-wr-3"])


def test_matmul_has_single_channel_views():
    layer = LayerSpec("matmul", K=1, C=4, H=2, W=2)
    tr = generate_trace(layer, TileSchedule.for_row("mm-1", C_T=2, H_T=1, W_T=1))
    roles = {e.tile.role for e in tr.events}
    assert roles == {Role.IFMAP, Role.WEIGHT, Role.OFMAP}


def test_sequence_numbers_are_dense():
    layer = LayerSpec("conv", K=4, C=4, H=4, W=4)
    tr = generate_trace(layer, TileSchedule.for_row("conv-ir-2", K_T=2, C_T=2, H_T=2, W_T=2))
    assert [e.seq for e in tr.events] == list(range(len(tr)))


def test_alphas_and_divisibility():
    layer = LayerSpec("conv", K=4, C=6, H=8, W=8)
    s = TileSchedule.for_row("conv-ir-2", K_T=2, C_T=3, H_T=4, W_T=8)
    assert alphas(layer, s) == {"k": 2, "c": 2, "h": 2, "w": 1}
    with pytest.raises(NonDivisibleTiling):
        alphas(layer, TileSchedule.for_row("conv-ir-2", K_T=3))
    assert loop_ranges(layer, s, BY_ID["conv-ir-2"].loop_order) == [2, 1, 2, 2]


def test_tiles_in_layer():
    layer = LayerSpec("conv", K=4, C=6, H=8, W=8)
    s = TileSchedule.for_row("conv-ir-2", K_T=2, C_T=3, H_T=4, W_T=8)
    assert tiles_in_layer(layer, s, Role.OFMAP) == 2 * 2
    assert tiles_in_layer(layer, s, Role.IFMAP) == 2 * 2
    assert tiles_in_layer(layer, s, Role.WEIGHT) == 4


def test_unknown_and_unsupported_rows():
    with pytest.raises(UnknownRow):
        TileSchedule.for_row("conv-xx-9")
    layer = LayerSpec("conv", K=2, C=2, H=2, W=2)
    with pytest.raises(UnsupportedCombination):
        resolve_row(layer, TileSchedule(1, 1, 1, 1, (), style_row="conv-or-3"))


def test_single_element_iterator_needs_unit_tile():
    layer = LayerSpec("conv", K=2, C=4, H=2, W=2)
    with pytest.raises(InvalidSchedule):
        generate_trace(layer, TileSchedule.for_row("conv-ir-1", C_T=2))


def test_layer_validation():
    with pytest.raises(ValueError):
        LayerSpec("matmul", K=2, C=1, H=1, W=1)
    with pytest.raises(ValueError):
        LayerSpec("pool", K=2, C=3, H=1, W=1)
    with pytest.raises(ValueError):
        LayerSpec("conv", K=0, C=1, H=1, W=1)
    with pytest.raises(ValueError):
        GlobalBuffer(ofmap=0)


def test_enumerated_rows_cover_all_tables():
    tables = {r.table for r in enumerate_table_rows()}
    assert tables == {"conv", "weight", "matmul", "style1", "style2", "style3"}
    assert len(enumerate_table_rows()) == len(ROWS)


def test_eval_alpha():
    a = {"k": 2, "c": 3, "h": 4, "w": 5}
    assert eval_alpha("K*HW", a) == 40
    assert eval_alpha("1", a) == 1
    assert eval_alpha("C", a) == 3


def test_widen_and_pad():
    layer = LayerSpec("conv", K=3, C=3, H=32, W=32)
    assert widen_layer(layer, (56, 56)).H == 56
    with pytest.raises(ShrinkNotAllowed):
        widen_layer(layer, (16, 16))
    padded = pad_to_divisible(LayerSpec("conv", K=5, C=3, H=7, W=9),
                              TileSchedule.for_row("conv-ir-2", K_T=2, C_T=2, H_T=4, W_T=4))
    assert (padded.K, padded.C, padded.H, padded.W) == (6, 4, 8, 12)


def test_trace_csv_roundtrip():
    layer = LayerSpec("conv", K=2, C=2, H=2, W=2)
    tr = generate_trace(layer, TileSchedule.for_row("conv-ir-2", H_T=1, W_T=1))
    buf = io.StringIO()
    write_trace_csv(tr.events, buf)
    first = buf.getvalue().splitlines()[0]
    assert first == "0,1,ifmap,0,0,0,R,0"
    back = read_trace_csv(io.StringIO(buf.getvalue()))
    assert [(e.seq, e.tile, e.direction, e.last_write) for e in back] == \
        [(e.seq, e.tile, e.direction, e.last_write) for e in tr.events]
    with pytest.raises(ValueError):
        read_trace_csv(io.StringIO("1,2,3\n"))
