"""Per-access metadata protocols of the five compared designs.

Each scheme turns one logical tile access (a list of contiguous DRAM runs)
into the metadata traffic and stalls it incurs.  Metadata requests are
issued once per run for every metadata line the run covers.
"""
from __future__ import annotations

import enum
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

from .dataflow import AccessEvent, Direction, Role


class UnknownScheme(ValueError):
    pass


class SchemeKind(str, enum.Enum):
    BASELINE = "baseline"
    SECURE = "secure"
    TNPU = "tnpu"
    GUARDNN = "guardnn"
    SECULATOR = "seculator"


ALL_SCHEMES = tuple(s.value for s in SchemeKind)


def scheme_kind(name) -> SchemeKind:
    try:
        return SchemeKind(str(getattr(name, "value", name)).lower())
    except ValueError:
        raise UnknownScheme(f"unknown scheme {name!r}; choose from {', '.join(ALL_SCHEMES)}") from None


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str = "seculator"
    mac_cache_bytes: int = 8192
    counter_cache_bytes: int = 4096
    cache_ways: int = 4
    block_bytes: int = 64
    pixel_bytes: int = 4
    stored_mac_bytes: int = 8
    counter_page_bytes: int = 4096      # one counter line tracks one page
    merkle_arity: int = 8
    protected_bytes: int = 1 << 30      # memory covered by the Secure scheme's tree
    host_vn_message_cost: int = 100     # GuardNN, cycles per tile read
    tensor_table_access_cost: int = 100  # TNPU, cycles per tile transition

    def __post_init__(self):
        scheme_kind(self.scheme)
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "scheme" and (not isinstance(v, int) or v < 0):
                raise ValueError(f"{f.name} must be a non-negative integer")
        for name in ("mac_cache_bytes", "counter_cache_bytes", "cache_ways", "block_bytes",
                     "pixel_bytes", "stored_mac_bytes", "counter_page_bytes", "protected_bytes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.merkle_arity < 2:
            raise ValueError("merkle_arity must be >= 2")

    @property
    def kind(self) -> SchemeKind:
        return scheme_kind(self.scheme)

    @property
    def pixels_per_block(self) -> int:
        return self.block_bytes // self.pixel_bytes

    @property
    def blocks_per_mac_line(self) -> int:
        return self.block_bytes // self.stored_mac_bytes

    @property
    def blocks_per_counter_line(self) -> int:
        return self.counter_page_bytes // self.block_bytes

    @property
    def merkle_height(self) -> int:
        lines = max(1, self.protected_bytes // self.counter_page_bytes)
        return max(1, math.ceil(math.log(lines, self.merkle_arity) - 1e-9))

    def to_dict(self) -> dict:
        return asdict(self)


class CacheModel:
    """Set-associative, LRU, write-back, write-allocate cache of 64 B lines."""

    def __init__(self, capacity_bytes: int, line_bytes: int = 64, ways: int = 4):
        lines = capacity_bytes // line_bytes
        if lines < 1 or ways < 1:
            raise ValueError("cache must hold at least one line")
        self.ways = min(ways, lines)
        self.n_sets = max(1, lines // self.ways)
        self.capacity_lines = self.n_sets * self.ways
        self.sets: list[OrderedDict] = [OrderedDict() for _ in range(self.n_sets)]
        self.hits = self.misses = self.writebacks = self.dirty_insertions = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    @property
    def miss_rate(self) -> float:
        return self.misses / self.lookups if self.lookups else 0.0

    @property
    def occupancy(self) -> int:
        return sum(len(s) for s in self.sets)

    def access(self, line: int, write: bool = False) -> tuple[bool, Optional[int]]:
        """Returns ``(hit, dirty_line_evicted)``."""
        s = self.sets[line % self.n_sets]
        victim = None
        if line in s:
            self.hits += 1
            s.move_to_end(line)
            hit = True
        else:
            self.misses += 1
            hit = False
            if len(s) >= self.ways:
                old, dirty = s.popitem(last=False)
                if dirty:
                    self.writebacks += 1
                    victim = old
            s[line] = False
        if write and not s[line]:
            s[line] = True
            self.dirty_insertions += 1
        return hit, victim

    def flush(self) -> list[int]:
        dirty = [l for s in self.sets for l, d in s.items() if d]
        self.writebacks += len(dirty)
        for s in self.sets:
            for l in s:
                s[l] = False
        return dirty


@dataclass
class MetadataEffects:
    meta_reads: int = 0
    meta_writes: int = 0
    mac_hits: int = 0
    mac_misses: int = 0
    ctr_hits: int = 0
    ctr_misses: int = 0
    merkle_levels: int = 0
    host_messages: int = 0
    tensor_table_accesses: int = 0
    mac_computations: int = 0
    verifications: int = 0
    serial_round_trips: int = 0   # dependent DRAM round trips beyond the data fetch

    def __iadd__(self, other: "MetadataEffects") -> "MetadataEffects":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    @property
    def meta_transfers(self) -> int:
        return self.meta_reads + self.meta_writes

    def as_dict(self) -> dict:
        return asdict(self)


Run = tuple[int, int]   # (first global block number, block count)


def _lines(runs: Sequence[Run], blocks_per_line: int) -> list[int]:
    return [line for line, _ in _line_cover(runs, blocks_per_line)]


def _line_cover(runs: Sequence[Run], blocks_per_line: int) -> list[tuple[int, bool]]:
    """Metadata lines covered by each run, flagged when the run spans the whole line."""
    out = []
    for start, n in runs:
        end = start + n
        for line in range(start // blocks_per_line, (end - 1) // blocks_per_line + 1):
            lo, hi = line * blocks_per_line, (line + 1) * blocks_per_line
            out.append((line, start <= lo and hi <= end))
    return out


class Scheme:
    """Base: the unprotected baseline."""

    kind = SchemeKind.BASELINE

    def __init__(self, config: SchemeConfig):
        self.config = config

    def apply(self, event: AccessEvent, runs: Sequence[Run]) -> MetadataEffects:
        return MetadataEffects()

    def end_layer(self) -> MetadataEffects:
        return MetadataEffects()

    def finish(self) -> MetadataEffects:
        return MetadataEffects()

    def caches(self) -> dict[str, CacheModel]:
        return {}


class _MacCached(Scheme):
    """Stored per-block MACs behind an on-chip MAC cache."""

    def __init__(self, config: SchemeConfig):
        super().__init__(config)
        self.mac_cache = CacheModel(config.mac_cache_bytes, config.block_bytes, config.cache_ways)

    def _macs(self, event, runs, fx: MetadataEffects) -> None:
        write = event.direction is Direction.WRITE
        for line, whole in _line_cover(runs, self.config.blocks_per_mac_line):
            hit, victim = self.mac_cache.access(line, write)
            if hit:
                fx.mac_hits += 1
            else:
                fx.mac_misses += 1
                # a write covering the whole line allocates without fetching it
                if not (write and whole):
                    fx.meta_reads += 1
            if victim is not None:
                fx.meta_writes += 1
        fx.mac_computations += sum(n for _, n in runs)

    def finish(self) -> MetadataEffects:
        return MetadataEffects(meta_writes=len(self.mac_cache.flush()))

    def caches(self):
        return {"mac": self.mac_cache}


class TnpuScheme(_MacCached):
    kind = SchemeKind.TNPU

    def apply(self, event, runs):
        fx = MetadataEffects()
        self._macs(event, runs, fx)
        if event.tile.role is not Role.WEIGHT:
            # VN of the tile from the host-side tensor table
            fx.tensor_table_accesses += 1
            fx.meta_reads += 1
        return fx


class SecureScheme(_MacCached):
    """Counter-mode memory encryption with a Merkle tree over the counters."""

    kind = SchemeKind.SECURE

    def __init__(self, config):
        super().__init__(config)
        self.ctr_cache = CacheModel(config.counter_cache_bytes, config.block_bytes, config.cache_ways)
        self.levels = config.merkle_height

    def apply(self, event, runs):
        fx = MetadataEffects()
        write = event.direction is Direction.WRITE
        chain = 0
        for line in _lines(runs, self.config.blocks_per_counter_line):
            hit, victim = self.ctr_cache.access(line, write)
            if hit:
                fx.ctr_hits += 1
            else:
                fx.ctr_misses += 1
                fx.meta_reads += 1 + self.levels
                fx.merkle_levels += self.levels
                chain = self.levels
            if victim is not None:
                fx.meta_writes += 1 + self.levels
                fx.merkle_levels += self.levels
        fx.serial_round_trips = chain
        self._macs(event, runs, fx)
        return fx

    def finish(self):
        fx = super().finish()
        dirty = len(self.ctr_cache.flush())
        fx.meta_writes += dirty * (1 + self.levels)
        fx.merkle_levels += dirty * self.levels
        return fx

    def caches(self):
        return {"mac": self.mac_cache, "counter": self.ctr_cache}


class GuardnnScheme(Scheme):
    kind = SchemeKind.GUARDNN

    def apply(self, event, runs):
        fx = MetadataEffects()
        lines = _lines(runs, self.config.blocks_per_mac_line)
        if event.direction is Direction.WRITE:
            fx.meta_writes += len(lines)
        else:
            fx.meta_reads += len(lines)
            if event.tile.role is not Role.WEIGHT:
                fx.host_messages += 1
        fx.mac_computations += sum(n for _, n in runs)
        return fx


class SeculatorScheme(Scheme):
    kind = SchemeKind.SECULATOR

    def apply(self, event, runs):
        return MetadataEffects(mac_computations=sum(n for _, n in runs))

    def end_layer(self):
        return MetadataEffects(verifications=1)


_CLASSES = {
    SchemeKind.BASELINE: Scheme,
    SchemeKind.SECURE: SecureScheme,
    SchemeKind.TNPU: TnpuScheme,
    SchemeKind.GUARDNN: GuardnnScheme,
    SchemeKind.SECULATOR: SeculatorScheme,
}


def make_scheme(config: SchemeConfig | str) -> Scheme:
    if isinstance(config, str):
        config = SchemeConfig(scheme=config)
    return _CLASSES[config.kind](config)


def apply(scheme: Scheme, event: AccessEvent, runs: Sequence[Run]) -> MetadataEffects:
    return scheme.apply(event, runs)
