"""DRAM placement of activations and weights, and tile -> block mapping.

Activation tensors are stored flat and row-major (channel, row, col) with
4-byte pixels; a channel is one fmap, so a block's fmap id ``F`` is its
channel and ``I`` its 64-byte index inside that channel.  Weight tensors are
stored tile-contiguous, each tile padded to whole blocks, under a reserved
fmap id.  Every tensor region starts on a 4 KB page.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

from .dataflow import (
    AccessEvent,
    DataflowError,
    LayerSpec,
    Role,
    TileSchedule,
    alphas,
    role_dims,
)
from .tables import LayerKind

BLOCK_BYTES = 64
PIXEL_BYTES = 4
PIXELS_PER_BLOCK = BLOCK_BYTES // PIXEL_BYTES
PAGE_BYTES = 4096
WEIGHT_FMAP = 0xFFFF0000
HOST_LAYER = 0


class LayoutError(DataflowError):
    pass


@dataclass(frozen=True)
class BlockRef:
    """One 64-byte block: MAC/counter identity ``(L, F, I)`` plus its address."""

    layer: int
    fmap: int
    index: int
    addr: int


@dataclass(frozen=True)
class Tensor:
    name: str
    layer: int          # L of every block (producer layer, 0 = host input)
    shape: tuple[int, int, int]
    base: int
    n_blocks: int
    weight: bool = False
    tile_blocks: int = 0   # weights: blocks per tile

    @property
    def channel_blocks(self) -> int:
        ch, rows, cols = self.shape
        return rows * cols // PIXELS_PER_BLOCK

    @property
    def size_bytes(self) -> int:
        return self.n_blocks * BLOCK_BYTES

    def ref(self, block: int) -> BlockRef:
        if not 0 <= block < self.n_blocks:
            raise LayoutError(f"block {block} outside tensor {self.name}")
        if self.weight:
            f, i = WEIGHT_FMAP, block
        else:
            f, i = divmod(block, self.channel_blocks)
        return BlockRef(self.layer, f, i, self.base + block * BLOCK_BYTES)

    def refs(self) -> list[BlockRef]:
        return [self.ref(b) for b in range(self.n_blocks)]


def output_shape(layer: LayerSpec) -> tuple[int, int, int]:
    if layer.kind in (LayerKind.MATMUL, LayerKind.PREPROC_STYLE2):
        return (1, layer.H, layer.W)
    return (layer.K, layer.H, layer.W)


def input_shape(layer: LayerSpec) -> tuple[int, int, int]:
    if layer.kind is LayerKind.MATMUL:
        return (1, layer.H, layer.C)
    return (layer.C, layer.H, layer.W)


def _pixels(shape) -> int:
    ch, rows, cols = shape
    return ch * rows * cols


def _merge(runs: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for start, n in runs:
        if out and out[-1][0] + out[-1][1] == start:
            out[-1][1] += n
        else:
            out.append([start, n])
    return [tuple(r) for r in out]


def region_runs(shape, channels: range, rows: range, cols: range) -> list[tuple[int, int]]:
    """Contiguous pixel runs ``(start, length)`` covering a box of a flat
    row-major tensor, merged where rows or channels abut."""
    _, nrows, ncols = shape
    runs = []
    for ch in channels:
        for r in rows:
            runs.append(((ch * nrows + r) * ncols + cols.start, len(cols)))
    return _merge(runs)


def pixel_to_block_runs(runs: Sequence[tuple[int, int]], what: str) -> list[tuple[int, int]]:
    out = []
    for start, n in runs:
        if start % PIXELS_PER_BLOCK or n % PIXELS_PER_BLOCK:
            raise LayoutError(
                f"{what}: run of {n} px at pixel {start} is not aligned to "
                f"{PIXELS_PER_BLOCK}-pixel blocks; use tile widths that are multiples of "
                f"{PIXELS_PER_BLOCK} or full-width bands")
        out.append((start // PIXELS_PER_BLOCK, n // PIXELS_PER_BLOCK))
    return out


@dataclass
class LayerPlacement:
    layer: LayerSpec
    schedule: TileSchedule
    ifmap: Tensor
    ofmap: Tensor
    weight: Optional[Tensor]
    alpha: dict

    def _box(self, role: Role, tile) -> tuple[range, range, range]:
        dims = role_dims(self.layer.kind)[role]
        shape = self.ofmap.shape if role is Role.OFMAP else input_shape(self.layer)
        coords = (tile.channel, tile.row_tile, tile.col_tile)
        box = []
        for axis, (d, idx) in enumerate(zip(dims, coords)):
            if not d:
                box.append(range(shape[axis]))
            else:
                t = self.schedule.tile(d)
                box.append(range(idx * t, (idx + 1) * t))
        return tuple(box)

    def runs(self, event: AccessEvent) -> list[tuple[Tensor, int, int]]:
        """Contiguous block runs ``(tensor, first_block, n_blocks)`` touched by an event."""
        tile = event.tile
        if tile.role is Role.WEIGHT:
            w = self.weight
            dims = role_dims(self.layer.kind)[Role.WEIGHT]
            idx = 0
            for d, coord in zip(dims, (tile.channel, tile.row_tile, tile.col_tile)):
                if d:
                    idx = idx * self.alpha[d] + coord
            return [(w, idx * w.tile_blocks, w.tile_blocks)]
        tensor = self.ofmap if tile.role is Role.OFMAP else self.ifmap
        shape = self.ofmap.shape if tile.role is Role.OFMAP else input_shape(self.layer)
        px = region_runs(shape, *self._box(tile.role, tile))
        what = f"layer {self.layer.layer_id} {tile.role.value}"
        return [(tensor, s, n) for s, n in pixel_to_block_runs(px, what)]

    def blocks(self, event: AccessEvent) -> list[BlockRef]:
        return [t.ref(b) for t, s, n in self.runs(event) for b in range(s, s + n)]

    def halo_runs(self, event: AccessEvent) -> list[tuple[Tensor, int, int]]:
        """Neighbouring ifmap blocks fetched for filter overlap across tile borders.

        Rows just above/below the tile band (R > 1) and the single blocks left
        and right of each row segment (S > 1), clipped at the fmap edges.
        """
        lay = self.layer
        if event.tile.role is not Role.IFMAP or (lay.R == 1 and lay.S == 1):
            return []
        if lay.kind not in (LayerKind.CONVOLUTION, LayerKind.POOLING, LayerKind.PREPROC_STYLE1):
            return []
        shape = input_shape(lay)
        _, nrows, ncols = shape
        chans, rows, cols = self._box(Role.IFMAP, event.tile)
        pr, ps = (lay.R - 1) // 2, (lay.S - 1) // 2
        above = range(max(0, rows.start - pr), rows.start)
        below = range(rows.stop, min(nrows, rows.stop + (lay.R - 1 - pr)))
        px = []
        for band in (above, below):
            if len(band):
                px += region_runs(shape, chans, band, cols)
        if lay.S > 1:
            ppb = PIXELS_PER_BLOCK
            span = range(max(0, rows.start - pr), min(nrows, rows.stop + (lay.R - 1 - pr)))
            sides = []
            if cols.start > 0 and ps:
                sides.append(range(cols.start - ppb, cols.start))
            if cols.stop < ncols and lay.S - 1 - ps:
                sides.append(range(cols.stop, cols.stop + ppb))
            for side in sides:
                px += region_runs(shape, chans, span, side)
        px = [(a - a % PIXELS_PER_BLOCK, -(-(a % PIXELS_PER_BLOCK + n) // PIXELS_PER_BLOCK) * PIXELS_PER_BLOCK)
              for a, n in px]
        return [(self.ifmap, s, n) for s, n in pixel_to_block_runs(px, "halo")]

    def halo_blocks(self, event: AccessEvent) -> int:
        return sum(n for _, _, n in self.halo_runs(event))


class NetworkLayout:
    """Places every tensor of a network in one flat address space."""

    def __init__(self, network: Sequence[tuple[LayerSpec, TileSchedule]], base: int = 0x100000):
        self.tensors: list[Tensor] = []
        self.layers: list[LayerPlacement] = []
        self._next = base
        if not network:
            raise LayoutError("empty network")
        first = network[0][0]
        prev = self._add("input", HOST_LAYER, input_shape(first))
        self.input = prev
        for layer, sched in network:
            view = input_shape(layer)
            if _pixels(view) != _pixels(prev.shape):
                raise LayoutError(
                    f"layer {layer.layer_id} ({layer.name or layer.kind.value}) reads "
                    f"{_pixels(view)} px but its producer writes {_pixels(prev.shape)} px")
            alpha = alphas(layer, sched)
            weight = self._add_weights(layer, sched, alpha) if layer.has_weights else None
            out = self._add(f"L{layer.layer_id}.out", layer.layer_id, output_shape(layer))
            self.layers.append(LayerPlacement(layer, sched, prev, out, weight, alpha))
            prev = out
        self.output = prev

    def _alloc(self, nbytes: int) -> int:
        base = self._next
        self._next += -(-nbytes // PAGE_BYTES) * PAGE_BYTES
        return base

    def _add(self, name: str, layer_id: int, shape) -> Tensor:
        ch, rows, cols = shape
        if (rows * cols) % PIXELS_PER_BLOCK:
            raise LayoutError(
                f"tensor {name}: fmap of {rows}x{cols} px does not fill whole {BLOCK_BYTES}-byte blocks")
        n = _pixels(shape) // PIXELS_PER_BLOCK
        t = Tensor(name, layer_id, tuple(shape), self._alloc(n * BLOCK_BYTES), n)
        self.tensors.append(t)
        return t

    def _add_weights(self, layer: LayerSpec, sched: TileSchedule, alpha) -> Tensor:
        if layer.kind is LayerKind.MATMUL:
            tiles = alpha["c"] * alpha["w"]
            tile_px = sched.C_T * sched.W_T
        else:
            tiles = alpha["k"] * alpha["c"]
            tile_px = sched.K_T * sched.C_T * layer.R * layer.S
        per_tile = -(-tile_px // PIXELS_PER_BLOCK)
        n = tiles * per_tile
        t = Tensor(f"L{layer.layer_id}.weight", layer.layer_id, (tiles, 1, tile_px),
                   self._alloc(n * BLOCK_BYTES), n, weight=True, tile_blocks=per_tile)
        self.tensors.append(t)
        return t

    @property
    def end(self) -> int:
        return self._next

    @property
    def total_bytes(self) -> int:
        return sum(t.size_bytes for t in self.tensors)

    def regions(self) -> Iterator[tuple[int, int]]:
        """Mapped address ranges ``(base, size)``, page-rounded."""
        for t in self.tensors:
            yield t.base, -(-t.size_bytes // PAGE_BYTES) * PAGE_BYTES

    def placement(self, layer_id: int) -> LayerPlacement:
        return self.layers[layer_id - 1]
