"""Tile-granularity access traces for tiled DNN layers.

A layer (:class:`LayerSpec`) plus a tiling choice (:class:`TileSchedule`)
fully determines the sequence of tile reads and writes seen at the global
buffer boundary.  The generator walks the loop nest outer to inner and keeps
a small FIFO of resident tiles per operand role; an ofmap tile leaving the
buffer is a write, and bringing back a tile that was already written is a
partial-sum read.
"""
from __future__ import annotations

import csv
import enum
import io
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, Sequence

from .tables import (
    BY_ID,
    ITERATORS,
    UNSUPPORTED,
    LayerKind,
    Reuse,
    TableRow,
    rows_for_kind,
)


class DataflowError(ValueError):
    pass


class NonDivisibleTiling(DataflowError):
    pass


class UnknownRow(DataflowError):
    pass


class UnsupportedCombination(UnknownRow):
    pass


class InvalidSchedule(DataflowError):
    pass


class ShrinkNotAllowed(DataflowError):
    pass


class Role(str, enum.Enum):
    IFMAP = "ifmap"
    OFMAP = "ofmap"
    WEIGHT = "weight"


class Direction(str, enum.Enum):
    READ = "R"
    WRITE = "W"


@dataclass(frozen=True)
class LayerSpec:
    """Shape of one layer.

    For ``MATMUL`` the operands are A: H x C, B: C x W and the output H x W;
    K, R and S must be 1.
    """

    kind: LayerKind
    K: int
    C: int
    H: int
    W: int
    R: int = 1
    S: int = 1
    layer_id: int = 1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        for dim in ("K", "C", "H", "W", "R", "S"):
            if int(getattr(self, dim)) < 1:
                raise DataflowError(f"{dim} must be >= 1, got {getattr(self, dim)}")
        if self.kind is LayerKind.MATMUL and (self.K, self.R, self.S) != (1, 1, 1):
            raise DataflowError("matmul layers use H x C times C x W; K, R, S must be 1")
        if self.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING) and self.K != self.C:
            raise DataflowError(f"{self.kind.value} layers need K == C")
        if self.kind is LayerKind.PREPROC_STYLE2 and self.K != 1:
            raise DataflowError("style-2 layers produce a single output channel (K == 1)")

    @property
    def has_weights(self) -> bool:
        return self.kind in (LayerKind.CONVOLUTION, LayerKind.MATMUL)

    def dim(self, d: str) -> int:
        return {"k": self.K, "c": self.C, "h": self.H, "w": self.W}[d]


@dataclass(frozen=True)
class TileSchedule:
    K_T: int
    C_T: int
    H_T: int
    W_T: int
    loop_order: tuple[str, ...]
    reuse: Optional[Reuse] = None
    style_row: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "loop_order", tuple(self.loop_order))
        if self.reuse is not None:
            object.__setattr__(self, "reuse", Reuse(self.reuse))
        for name in ("K_T", "C_T", "H_T", "W_T"):
            if int(getattr(self, name)) < 1:
                raise InvalidSchedule(f"{name} must be >= 1")
        unknown = [it for it in self.loop_order if it not in ITERATORS]
        if unknown:
            raise InvalidSchedule(f"unknown loop iterators {unknown}")
        dims = [ITERATORS[it][0] for it in self.loop_order]
        if len(set(dims)) != len(dims):
            raise InvalidSchedule(f"duplicate iterator dimension in {self.loop_order}")

    def tile(self, d: str) -> int:
        return {"k": self.K_T, "c": self.C_T, "h": self.H_T, "w": self.W_T}[d]

    @classmethod
    def for_row(cls, row_id: str, *, K_T=1, C_T=1, H_T=1, W_T=1) -> "TileSchedule":
        row = BY_ID.get(row_id)
        if row is None:
            raise UnknownRow(f"no table row {row_id!r}")
        return cls(K_T, C_T, H_T, W_T, row.loop_order, row.reuse, row.row_id)


@dataclass(frozen=True)
class TileId:
    role: Role
    channel: int
    row_tile: int
    col_tile: int
    layer_id: int


@dataclass(frozen=True)
class AccessEvent:
    tile: TileId
    direction: Direction
    seq: int
    last_write: bool = False
    # loop position (aligned with the schedule's loop order) at which the event fired
    index: tuple[int, ...] = ()

    @property
    def is_read(self) -> bool:
        return self.direction is Direction.READ


@dataclass(frozen=True)
class GlobalBuffer:
    """Resident-tile capacity per operand role."""

    ofmap: int = 1
    ifmap: int = 1
    weight: int = 1

    def __post_init__(self):
        if min(self.ofmap, self.ifmap, self.weight) < 1:
            raise DataflowError("buffer capacities must be >= 1 tile")

    def capacity(self, role: Role) -> int:
        return getattr(self, role.value)


DEFAULT_GB = GlobalBuffer()


@dataclass(frozen=True)
class AccessTrace:
    layer: LayerSpec
    schedule: TileSchedule
    events: tuple[AccessEvent, ...]
    row: TableRow = field(compare=False, default=None)

    def __len__(self):
        return len(self.events)

    def __iter__(self) -> Iterator[AccessEvent]:
        return iter(self.events)

    def select(self, role: Role, direction: Optional[Direction] = None) -> list[AccessEvent]:
        return [e for e in self.events
                if e.tile.role is role and (direction is None or e.direction is direction)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_trace_csv(self.events, buf)
        return buf.getvalue()


def alphas(layer: LayerSpec, schedule: TileSchedule) -> dict[str, int]:
    """Tile counts per dimension; raises NonDivisibleTiling on ragged tiles."""
    out = {}
    for d in "kchw":
        size, tile = layer.dim(d), schedule.tile(d)
        if size % tile:
            raise NonDivisibleTiling(f"tile size {tile} does not divide {d.upper()}={size}")
        out[d] = size // tile
    return out


def _row_by_order(layer: LayerSpec, order: tuple[str, ...], reuse: Optional[Reuse]) -> TableRow:
    rows = rows_for_kind(layer.kind)
    if reuse is not None:
        rows = [r for r in rows if r.reuse in (None, reuse)]
    exact = [r for r in rows if r.loop_order == order]
    if exact:
        # rows sharing a loop order (e.g. conv-ir-6 / conv-or-6) share the pattern too
        return exact[0]
    printed = [r for r in rows if r.printed_order == order]
    if len(printed) == 1:
        return printed[0]
    if len(printed) > 1:
        ids = ", ".join(r.row_id for r in printed)
        raise UnknownRow(f"loop order {' ▷ '.join(order)} is ambiguous ({ids}); set style_row")
    raise UnknownRow(f"no {layer.kind.value} table row with loop order {' ▷ '.join(order)}")


def resolve_row(layer: LayerSpec, schedule: TileSchedule) -> TableRow:
    """Find the table row a schedule models and check the schedule against it."""
    if schedule.style_row is not None:
        row = BY_ID.get(schedule.style_row)
        if row is None:
            _raise_unknown_id(schedule.style_row)
        if row not in rows_for_kind(layer.kind):
            raise UnknownRow(f"row {row.row_id} is not a {layer.kind.value} row")
        if schedule.loop_order and schedule.loop_order not in (row.loop_order, row.printed):
            raise UnknownRow(
                f"loop order {' ▷ '.join(schedule.loop_order)} does not match row {row.row_id} "
                f"({row.pretty_order(printed=False)})")
    else:
        row = _row_by_order(layer, schedule.loop_order, schedule.reuse)
    if schedule.reuse is not None and row.reuse is not None and schedule.reuse is not row.reuse:
        raise UnknownRow(f"row {row.row_id} is {row.reuse.value} reuse, schedule says {schedule.reuse.value}")
    _check_tiles(layer, schedule, row)
    return row


def _raise_unknown_id(row_id: str):
    parts = row_id.split("-")
    if len(parts) == 3:
        table, reuse, num = parts
        label = "①②③④⑤⑥⑦"[int(num) - 1] if num.isdigit() and 0 < int(num) <= 7 else num
        key = ({"s3": "style3"}.get(table, table), {"or": "output", "ir": "input"}.get(reuse, reuse), label)
        if key in UNSUPPORTED:
            raise UnsupportedCombination(f"row {row_id} is an empty cell in its pattern table")
    raise UnknownRow(f"no table row {row_id!r}")


def _check_tiles(layer: LayerSpec, schedule: TileSchedule, row: TableRow) -> None:
    alphas(layer, schedule)
    present = {ITERATORS[it][0]: ITERATORS[it][1] for it in row.loop_order}
    dims = "hcw" if layer.kind is LayerKind.MATMUL else "kchw"
    if layer.kind is LayerKind.MATMUL and schedule.K_T != 1:
        raise InvalidSchedule("matmul schedules use K_T = 1")
    if layer.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        # ifmap channel groups follow the ofmap groups one-to-one
        dims = "khw"
        if schedule.C_T != schedule.K_T:
            raise InvalidSchedule("style-1/pooling schedules need C_T == K_T")
    if layer.kind is LayerKind.PREPROC_STYLE2:
        dims = "chw"
    for d in dims:
        tile, size = schedule.tile(d), layer.dim(d)
        if d not in present:
            if tile != size:
                raise InvalidSchedule(
                    f"row {row.row_id} does not iterate over {d}; {d.upper()}_T must equal {d.upper()}={size}")
        elif present[d] and tile != 1:
            raise InvalidSchedule(
                f"row {row.row_id} iterates single {d} elements; {d.upper()}_T must be 1")


def _role_dims(kind: LayerKind) -> dict[Role, tuple[str, ...]]:
    """Which loop dimensions index each operand's tiles, as (channel, row, col)."""
    if kind is LayerKind.MATMUL:
        return {Role.OFMAP: ("", "h", "w"), Role.IFMAP: ("", "h", "c"), Role.WEIGHT: ("", "c", "w")}
    if kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        return {Role.OFMAP: ("k", "h", "w"), Role.IFMAP: ("k", "h", "w")}
    if kind is LayerKind.PREPROC_STYLE2:
        return {Role.OFMAP: ("", "h", "w"), Role.IFMAP: ("c", "h", "w")}
    if kind is LayerKind.PREPROC_STYLE3:
        return {Role.OFMAP: ("k", "h", "w"), Role.IFMAP: ("c", "h", "w")}
    return {Role.OFMAP: ("k", "h", "w"), Role.IFMAP: ("c", "h", "w"), Role.WEIGHT: ("k", "c", "")}


def role_dims(kind: LayerKind) -> dict[Role, tuple[str, ...]]:
    return _role_dims(LayerKind(kind))


def accumulates_in_buffer(row: TableRow) -> bool:
    """True when the reduction iterator is innermost, so partial ofmaps stay
    in the buffer across consecutive iterations; otherwise every update is
    written back (input/weight-stationary rows)."""
    return bool(row.loop_order) and ITERATORS[row.loop_order[-1]][0] == "c"


def generate_trace(layer: LayerSpec, schedule: TileSchedule, gb: GlobalBuffer = DEFAULT_GB) -> AccessTrace:
    """Emit the ordered tile reads/writes implied by the schedule's loop nest.

    Per iteration the input operands are fetched first (ifmap, then weight),
    then the ofmap tile; a tile that was written before is read back.  In
    rows that accumulate in the buffer (reduction innermost) ofmap tiles sit
    in a FIFO of ``gb.ofmap`` tiles and are written on eviction; in all other
    rows the partial ofmap is written back at the end of every iteration.
    Remaining tiles are flushed at the end of the layer, and the final write
    of every ofmap tile is flagged ``last_write``.
    """
    row = resolve_row(layer, schedule)
    alpha = alphas(layer, schedule)
    order = [ITERATORS[it][0] for it in row.loop_order]
    dims = _role_dims(layer.kind)
    lid = layer.layer_id
    accumulate = accumulates_in_buffer(row)

    def tile_of(role: Role, pos: dict[str, int]) -> TileId:
        ch, r, c = (pos.get(d, 0) if d else 0 for d in dims[role])
        return TileId(role, ch, r, c, lid)

    events: list[AccessEvent] = []
    resident: dict[Role, list[TileId]] = {role: [] for role in dims}
    written: set[TileId] = set()

    def emit(tile, direction, index):
        events.append(AccessEvent(tile, direction, len(events), index=index))

    inputs = [r for r in (Role.IFMAP, Role.WEIGHT) if r in dims]
    for index in itertools.product(*(range(alpha[d]) for d in order)):
        pos = dict(zip(order, index))
        for role in inputs:
            tile = tile_of(role, pos)
            fifo = resident[role]
            if tile in fifo:
                continue
            if len(fifo) >= gb.capacity(role):
                fifo.pop(0)
            emit(tile, Direction.READ, index)
            fifo.append(tile)
        tile = tile_of(Role.OFMAP, pos)
        if not accumulate:
            if tile in written:
                emit(tile, Direction.READ, index)
            written.add(tile)
            emit(tile, Direction.WRITE, index)
            continue
        fifo = resident[Role.OFMAP]
        if tile in fifo:
            continue
        if len(fifo) >= gb.ofmap:
            emit(fifo.pop(0), Direction.WRITE, index)
        if tile in written:
            emit(tile, Direction.READ, index)
        written.add(tile)
        fifo.append(tile)
    for tile in resident[Role.OFMAP]:
        emit(tile, Direction.WRITE, ())

    last: dict[TileId, int] = {}
    for ev in events:
        if ev.direction is Direction.WRITE:
            last[ev.tile] = ev.seq
    flagged = set(last.values())
    events = [replace(ev, last_write=True) if ev.seq in flagged else ev for ev in events]
    return AccessTrace(layer, schedule, tuple(events), row)


def enumerate_table_rows() -> list[TableRow]:
    """Every supported row of the convolution, weight-reuse, matmul and
    pre-processing pattern tables."""
    from .tables import ROWS
    return list(ROWS)


def widen_layer(layer: LayerSpec, target_hw: tuple[int, int]) -> LayerSpec:
    """Pad a layer's fmaps with junk data up to ``target_hw``."""
    h, w = target_hw
    if h < layer.H or w < layer.W:
        raise ShrinkNotAllowed(f"cannot widen {layer.H}x{layer.W} to {h}x{w}")
    return replace(layer, H=h, W=w)


def pad_to_divisible(layer: LayerSpec, schedule: TileSchedule) -> LayerSpec:
    """Zero-pad each dimension up to the next multiple of its tile size."""
    def up(n, t):
        return -(-n // t) * t
    dims = {"H": up(layer.H, schedule.H_T), "W": up(layer.W, schedule.W_T)}
    if layer.kind is not LayerKind.MATMUL:
        dims["K"] = up(layer.K, schedule.K_T)
    dims["C"] = up(layer.C, schedule.C_T)
    if layer.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        dims["C"] = dims["K"] = max(dims["C"], dims["K"])
    return replace(layer, **dims)


# trace dump: seq,layer,role,channel,row_tile,col_tile,R|W,last_write_flag
TRACE_FIELDS = ("seq", "layer", "role", "channel", "row_tile", "col_tile", "dir", "last_write")


def write_trace_csv(events: Iterable[AccessEvent], fh) -> None:
    out = csv.writer(fh, lineterminator="\n")
    for ev in events:
        t = ev.tile
        out.writerow([ev.seq, t.layer_id, t.role.value, t.channel, t.row_tile, t.col_tile,
                      ev.direction.value, int(ev.last_write)])


def read_trace_csv(fh) -> list[AccessEvent]:
    events = []
    for lineno, rec in enumerate(csv.reader(fh), 1):
        if not rec or rec[0].startswith("#"):
            continue
        if len(rec) != len(TRACE_FIELDS):
            raise DataflowError(f"line {lineno}: expected {len(TRACE_FIELDS)} fields, got {len(rec)}")
        seq, lid, role, ch, rt, ct, d, lw = rec
        tile = TileId(Role(role), int(ch), int(rt), int(ct), int(lid))
        events.append(AccessEvent(tile, Direction(d), int(seq), last_write=bool(int(lw))))
    return events


def tiles_in_layer(layer: LayerSpec, schedule: TileSchedule, role: Role = Role.OFMAP) -> int:
    alpha = alphas(layer, schedule)
    dims = _role_dims(layer.kind).get(role)
    if dims is None:
        return 0
    n = 1
    for d in dims:
        if d:
            n *= alpha[d]
    return n


def loop_ranges(layer: LayerSpec, schedule: TileSchedule, order: Sequence[str]) -> list[int]:
    alpha = alphas(layer, schedule)
    return [alpha[ITERATORS[it][0]] for it in order]
