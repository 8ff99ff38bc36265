"""Version-number patterns: the ⟨η, κ, ρ⟩ master sequence and its generator.

Every observed ofmap VN sequence has the form
``(1^η, 2^η, ..., κ^η)^ρ``; the generator walks that sequence with a
single cursor instead of keeping a table of per-tile VNs.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .dataflow import (
    AccessEvent,
    AccessTrace,
    Direction,
    LayerSpec,
    Role,
    TileId,
    TileSchedule,
    alphas,
    generate_trace,
    resolve_row,
    role_dims,
)
from .tables import ITERATORS, LayerKind, TableRow, eval_alpha


class PatternExhausted(RuntimeError):
    """More VN requests than the triplet predicts: traffic disagrees with the host's triplet."""


@dataclass(frozen=True)
class PatternTriplet:
    eta: int
    kappa: int
    rho: int

    def __post_init__(self):
        for name in ("eta", "kappa", "rho"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    def __len__(self):
        return self.eta * self.kappa * self.rho

    def at(self, i: int) -> int:
        if not 0 <= i < len(self):
            raise IndexError(i)
        return (i // self.eta) % self.kappa + 1

    def expand(self) -> list[int]:
        return [self.at(i) for i in range(len(self))]

    def to_text(self) -> str:
        return f"{self.eta},{self.kappa},{self.rho}"

    @classmethod
    def parse(cls, text: str) -> "PatternTriplet":
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValueError(f"triplet must be 'eta,kappa,rho', got {text!r}")
        return cls(*(int(p) for p in parts))


def derive_triplet(layer: LayerSpec, schedule: TileSchedule,
                   direction: Direction = Direction.WRITE) -> Optional[PatternTriplet]:
    """Triplet of the row's write (or partial-sum read) pattern.

    Returns ``None`` when the observer sees nothing: rows without
    read-back, or read patterns whose peak ``κ - 1`` is zero.
    """
    row = resolve_row(layer, schedule)
    alpha = alphas(layer, schedule)
    eta, kappa, rho = (eval_alpha(e, alpha) for e in row.write)
    if Direction(direction) is Direction.WRITE:
        return PatternTriplet(eta, kappa, rho)
    if not row.reads or kappa == 1:
        return None
    return PatternTriplet(eta, kappa - 1, rho)


@dataclass
class VnState:
    """Cursor over one expanded master sequence, owned by one in-flight layer.

    With ``track=True`` (test builds) the state also shadows the last VN
    handed out per tile to check per-tile monotonicity; ``peak_entries``
    records the largest size that shadow map reached and is bounded by the
    number of tiles in the current layer.
    """

    triplet: Optional[PatternTriplet]
    cursor: int = 0
    track: bool = False
    tile_limit: Optional[int] = None
    shadow: dict = field(default_factory=dict, repr=False)
    peak_entries: int = 0

    @property
    def remaining(self) -> int:
        total = len(self.triplet) if self.triplet else 0
        return total - self.cursor

    def next_vn(self, tile: Optional[TileId] = None) -> int:
        if self.triplet is None or self.cursor >= len(self.triplet):
            raise PatternExhausted(
                f"VN request #{self.cursor + 1} exceeds pattern "
                f"{self.triplet.to_text() if self.triplet else '<none>'}")
        vn = self.triplet.at(self.cursor)
        self.cursor += 1
        if self.track and tile is not None:
            prev = self.shadow.get(tile)
            if prev is not None and vn <= prev:
                raise PatternExhausted(f"non-increasing VN {vn} after {prev} for {tile}")
            self.shadow[tile] = vn
            self.peak_entries = max(self.peak_entries, len(self.shadow))
            if self.tile_limit is not None and len(self.shadow) > self.tile_limit:
                raise AssertionError(
                    f"VN shadow holds {len(self.shadow)} tiles, layer has {self.tile_limit}")
        return vn

    def reset(self, triplet: Optional[PatternTriplet], tile_limit: Optional[int] = None) -> None:
        """Start a new layer; nothing carries over."""
        self.triplet = triplet
        self.cursor = 0
        self.shadow.clear()
        self.tile_limit = tile_limit


def next_vn(state: VnState, tile: Optional[TileId] = None) -> int:
    return state.next_vn(tile)


class FirstReadDetector:
    """Decides first reads of read-only tiles from the loop position alone.

    A tile is first touched at the lexicographically first iteration that
    indexes it, i.e. when every loop iterator that does not index the tile's
    role sits at zero.  No per-tile bitmap is kept.
    """

    def __init__(self, layer: LayerSpec, schedule: TileSchedule, role: Role = Role.IFMAP):
        row = resolve_row(layer, schedule)
        indexing = set(d for d in role_dims(layer.kind).get(role, ()) if d)
        self.role = role
        self.free_positions = tuple(
            pos for pos, it in enumerate(row.loop_order) if ITERATORS[it][0] not in indexing)

    def __call__(self, event: AccessEvent) -> bool:
        if event.tile.role is not self.role or not event.is_read:
            return False
        if not event.index and self.free_positions:
            raise ValueError("event carries no loop position")
        return all(event.index[p] == 0 for p in self.free_positions)


def is_first_read(event: AccessEvent, detector: FirstReadDetector) -> bool:
    return detector(event)


def reads_per_tile(layer: LayerSpec, schedule: TileSchedule, role: Role) -> int:
    """How many times each tile of a read-only role is fetched (1-tile buffer).

    The tile changes whenever an indexing iterator moves; iterators inside
    the innermost indexing one only repeat the resident tile, so the count is
    the product of the non-indexing iterator ranges outside it.  Indexing
    iterators of range 1 never change the tile and are ignored.
    """
    row = resolve_row(layer, schedule)
    alpha = alphas(layer, schedule)
    indexing = set(d for d in role_dims(layer.kind).get(role, ()) if d)
    dims = [ITERATORS[it][0] for it in row.loop_order]
    inner = max((i for i, d in enumerate(dims) if d in indexing and alpha[d] > 1), default=-1)
    if inner < 0:
        return 1
    n = 1
    for d in dims[:inner]:
        if d not in indexing:
            n *= alpha[d]
    return n


def oracle_vn_sequence(trace: AccessTrace, direction: Direction = Direction.WRITE) -> list[int]:
    """Brute-force observer at the global buffer.

    Keeps an explicit counter per ofmap tile, bumps it on every write and
    reports the VN carried by each write (or by each partial-sum read).
    """
    counters: dict[TileId, int] = {}
    seen = []
    for ev in trace.events:
        if ev.tile.role is not Role.OFMAP:
            continue
        if ev.direction is Direction.WRITE:
            counters[ev.tile] = counters.get(ev.tile, 0) + 1
            if direction is Direction.WRITE:
                seen.append(counters[ev.tile])
        elif direction is Direction.READ:
            seen.append(counters[ev.tile])
    return seen


def first_divergence(expected: list[int], observed: list[int]) -> Optional[int]:
    for i, (a, b) in enumerate(zip(expected, observed)):
        if a != b:
            return i
    if len(expected) != len(observed):
        return min(len(expected), len(observed))
    return None


# -- oracle-equivalence suite --------------------------------------------------

def random_divisible_shape(row: TableRow, rng: random.Random, max_tiles: int = 4,
                           max_tile: int = 3) -> tuple[LayerSpec, TileSchedule]:
    """A random layer shape that the row's tile sizes divide exactly."""
    present = {ITERATORS[it][0]: ITERATORS[it][1] for it in row.loop_order}
    dims, tiles = {}, {}
    for d in "kchw":
        if d in present:
            t = 1 if present[d] else rng.randint(1, max_tile)
            dims[d], tiles[d] = t * rng.randint(1, max_tiles), t
        else:
            dims[d] = tiles[d] = rng.randint(1, 2 * max_tile)
    if row.kind in (LayerKind.MATMUL, LayerKind.PREPROC_STYLE2):
        dims["k"] = tiles["k"] = 1
    if row.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        dims["c"], tiles["c"] = dims["k"], tiles["k"]
    layer = LayerSpec(row.kind, dims["k"], dims["c"], dims["h"], dims["w"])
    sched = TileSchedule(tiles["k"], tiles["c"], tiles["h"], tiles["w"],
                         row.loop_order, row.reuse, row.row_id)
    return layer, sched


@dataclass
class RowCheck:
    row_id: str
    shapes: int = 0
    mismatches: int = 0
    first_failure: Optional[str] = None
    divergence: Optional[int] = None

    @property
    def ok(self) -> bool:
        return self.mismatches == 0


def check_row(row: TableRow, shapes: int, rng: random.Random,
              override: Optional[PatternTriplet] = None) -> RowCheck:
    """Compare triplet expansion with the brute-force observer on random shapes.

    ``override`` replaces the derived write triplet (a host-supplied value).
    """
    out = RowCheck(row.row_id)
    for _ in range(shapes):
        layer, sched = random_divisible_shape(row, rng)
        trace = generate_trace(layer, sched)
        out.shapes += 1
        for d in (Direction.WRITE, Direction.READ):
            trip = override if override is not None and d is Direction.WRITE else derive_triplet(layer, sched, d)
            expected = trip.expand() if trip else []
            observed = oracle_vn_sequence(trace, d)
            at = first_divergence(expected, observed)
            if at is not None:
                out.mismatches += 1
                if out.first_failure is None:
                    out.divergence = at
                    out.first_failure = (
                        f"{d.name.lower()} K={layer.K} C={layer.C} H={layer.H} W={layer.W} "
                        f"tiles={sched.K_T},{sched.C_T},{sched.H_T},{sched.W_T}: "
                        f"first divergence at index {at}")
    return out
