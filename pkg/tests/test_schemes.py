import pytest
from hypothesis import given, settings, strategies as st

from secnpu.dataflow import AccessEvent, Direction, Role, TileId
from secnpu.schemes import (
    ALL_SCHEMES,
    CacheModel,
    SchemeConfig,
    UnknownScheme,
    _line_cover,
    make_scheme,
    scheme_kind,
)


class RefLru:
    """Plain-list LRU per set, written independently of CacheModel."""

    def __init__(self, lines, ways):
        self.ways = min(ways, lines)
        self.sets = [[] for _ in range(max(1, lines // self.ways))]
        self.dirty = set()
        self.misses = self.writebacks = 0

    def access(self, line, write):
        s = self.sets[line % len(self.sets)]
        if line in s:
            s.remove(line)
        else:
            self.misses += 1
            if len(s) == self.ways:
                old = s.pop(0)
                if old in self.dirty:
                    self.dirty.discard(old)
                    self.writebacks += 1
        s.append(line)
        if write:
            self.dirty.add(line)


@settings(max_examples=200, deadline=None)
@given(lines=st.integers(1, 16), ways=st.integers(1, 8),
       ops=st.lists(st.tuples(st.integers(0, 40), st.booleans()), max_size=200))
def test_cache_matches_reference_lru(lines, ways, ops):
    c = CacheModel(lines * 64, 64, ways)
    ref = RefLru(lines, ways)
    for line, write in ops:
        c.access(line, write)
        ref.access(line, write)
    assert (c.misses, c.writebacks) == (ref.misses, ref.writebacks)
    assert c.hits == len(ops) - ref.misses
    assert len(c.flush()) == len(ref.dirty)


def test_cache_rejects_zero_capacity():
    with pytest.raises(ValueError):
        CacheModel(32, 64)


def test_line_cover():
    # blocks 4..19 with 8-block lines: partial, whole, partial
    assert _line_cover([(4, 16)], 8) == [(0, False), (1, True), (2, False)]
    assert _line_cover([(8, 8)], 8) == [(1, True)]


def _ev(role=Role.IFMAP, direction=Direction.READ):
    return AccessEvent(TileId(role, 0, 0, 0, 1), direction, 0)


def test_baseline_and_seculator_have_no_metadata_traffic():
    runs = [(0, 16)]
    assert make_scheme("baseline").apply(_ev(), runs).meta_transfers == 0
    sec = make_scheme("seculator")
    fx = sec.apply(_ev(), runs)
    assert fx.meta_transfers == 0 and fx.mac_computations == 16
    assert sec.end_layer().verifications == 1


def test_guardnn_stores_macs_and_asks_host():
    g = make_scheme("guardnn")
    fx = g.apply(_ev(), [(0, 16)])
    assert (fx.meta_reads, fx.host_messages) == (2, 1)
    assert g.apply(_ev(Role.WEIGHT), [(0, 8)]).host_messages == 0
    assert g.apply(_ev(Role.OFMAP, Direction.WRITE), [(0, 16)]).meta_writes == 2


def test_tnpu_mac_cache_and_tensor_table():
    t = make_scheme("tnpu")
    first = t.apply(_ev(), [(0, 16)])
    assert (first.mac_misses, first.tensor_table_accesses, first.meta_reads) == (2, 1, 3)
    again = t.apply(_ev(), [(0, 16)])
    assert (again.mac_hits, again.meta_reads) == (2, 1)
    # whole-line write allocates without a fetch
    w = t.apply(_ev(Role.OFMAP, Direction.WRITE), [(64, 8)])
    assert w.mac_misses == 1 and w.meta_reads == 1   # only the tensor table
    assert t.finish().meta_writes == 1


def test_secure_counter_miss_walks_tree():
    cfg = SchemeConfig(scheme="secure")
    assert cfg.merkle_height == 6     # 2^18 counter lines, arity 8
    s = make_scheme(cfg)
    fx = s.apply(_ev(), [(0, 16)])
    assert fx.ctr_misses == 1 and fx.merkle_levels == 6
    assert fx.serial_round_trips == 6
    assert fx.meta_reads == 1 + 6 + 2
    fx2 = s.apply(_ev(), [(0, 16)])
    assert fx2.ctr_hits == 1 and fx2.serial_round_trips == 0


def test_scheme_config_validation():
    with pytest.raises(UnknownScheme):
        SchemeConfig(scheme="tee")
    with pytest.raises(ValueError):
        SchemeConfig(mac_cache_bytes=0)
    with pytest.raises(ValueError):
        SchemeConfig(merkle_arity=1)
    assert {scheme_kind(s).value for s in ALL_SCHEMES} == set(ALL_SCHEMES)
    assert scheme_kind("TNPU").value == "tnpu"
