"""Network description files and the shipped desk-scale benchmarks.

A network file is YAML::

    name: tiny
    layers:
      - name: conv1
        kind: conv
        shape: {K: 4, C: 2, H: 8, W: 16, R: 3, S: 3}
        row: conv-ir-1
        tiles: {H_T: 4, W_T: 16}
        triplets: {write: "4,2,2"}     # optional host-supplied override

Tile sizes left out default to 1 for dimensions the row iterates over and
to the full dimension otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from .dataflow import (
    Direction,
    LayerSpec,
    TileSchedule,
    resolve_row,
)
from .patterns import PatternTriplet, derive_triplet
from .tables import BY_ID, ITERATORS, LayerKind

BENCHMARKS = ("mobilenet", "resnet", "alexnet", "vgg16", "vgg19")


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkLayer:
    layer: LayerSpec
    schedule: TileSchedule
    write_triplet: Optional[PatternTriplet] = None
    read_triplet: Optional[PatternTriplet] = None

    def triplet(self, direction: Direction) -> Optional[PatternTriplet]:
        override = self.write_triplet if direction is Direction.WRITE else self.read_triplet
        return override or derive_triplet(self.layer, self.schedule, direction)


@dataclass(frozen=True)
class Network:
    name: str
    layers: tuple[NetworkLayer, ...]
    description: str = ""

    def pairs(self) -> list[tuple[LayerSpec, TileSchedule]]:
        return [(nl.layer, nl.schedule) for nl in self.layers]

    def __len__(self):
        return len(self.layers)

    def widened(self, hw: tuple[int, int]) -> "Network":
        from .dataflow import widen_layer
        out = []
        for nl in self.layers:
            lay = widen_layer(nl.layer, hw)
            sched = nl.schedule
            # full-dimension tiles follow the new size; tiled dims keep their tile
            scale = {}
            if sched.H_T == nl.layer.H:
                scale["H_T"] = lay.H
            if sched.W_T == nl.layer.W:
                scale["W_T"] = lay.W
            out.append(NetworkLayer(lay, replace(sched, **scale)))
        return Network(f"{self.name}@{hw[0]}x{hw[1]}", tuple(out), self.description)


class _LineLoader(yaml.SafeLoader):
    pass


def _mapping_with_line(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=True)
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_with_line)


def load_yaml(text: str, source: str = "<string>"):
    """Parse YAML; every mapping gets a ``__line__`` key. Errors carry line numbers."""
    try:
        return yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise NetworkError(f"{where}: {getattr(exc, 'problem', None) or exc}") from None


def strip_lines(obj):
    if isinstance(obj, dict):
        return {k: strip_lines(v) for k, v in obj.items() if k != "__line__"}
    if isinstance(obj, list):
        return [strip_lines(v) for v in obj]
    return obj


_SHAPE_KEYS = ("K", "C", "H", "W", "R", "S")


def _default_tiles(layer: LayerSpec, row_id: str, given: dict) -> dict:
    row = BY_ID[row_id]
    present = {ITERATORS[it][0] for it in row.loop_order}
    out = {}
    for d in "kchw":
        key = f"{d.upper()}_T"
        if key in given:
            out[key] = int(given[key])
        elif d in present:
            out[key] = 1
        else:
            out[key] = layer.dim(d)
    if layer.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        out["C_T"] = out["K_T"]
    return out


def parse_layer(entry: dict, layer_id: int, source: str) -> NetworkLayer:
    line = entry.get("__line__", "?")
    where = f"{source}:{line}"
    try:
        kind = LayerKind(str(entry["kind"]).lower())
        shape = entry.get("shape") or {}
        dims = {k: int(shape.get(k, 1)) for k in _SHAPE_KEYS}
        layer = LayerSpec(kind, **dims, layer_id=layer_id, name=str(entry.get("name", f"L{layer_id}")))
        row_id = entry.get("row")
        if row_id is None:
            raise NetworkError("missing 'row'")
        if row_id not in BY_ID:
            resolve_row(layer, TileSchedule(1, 1, 1, 1, (), style_row=str(row_id)))
        tiles = _default_tiles(layer, row_id, strip_lines(entry.get("tiles") or {}))
        sched = TileSchedule.for_row(row_id, **tiles)
        resolve_row(layer, sched)
        trip = strip_lines(entry.get("triplets") or {})
        unknown = set(trip) - {"write", "read"}
        if unknown:
            raise NetworkError(f"unknown triplet keys {sorted(unknown)}")
        wt = PatternTriplet.parse(trip["write"]) if "write" in trip else None
        rt = PatternTriplet.parse(trip["read"]) if "read" in trip else None
        return NetworkLayer(layer, sched, wt, rt)
    except KeyError as exc:
        raise NetworkError(f"{where}: missing field {exc}") from None
    except (ValueError, TypeError) as exc:
        raise NetworkError(f"{where}: {exc}") from None


def parse_network(text: str, source: str = "<string>") -> Network:
    doc = load_yaml(text, source)
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise NetworkError(f"{source}: expected a mapping with a 'layers' list")
    if not doc["layers"]:
        raise NetworkError(f"{source}:{doc['__line__']}: network has no layers")
    layers = tuple(parse_layer(e, i, source) for i, e in enumerate(doc["layers"], 1))
    net = Network(str(doc.get("name", Path(source).stem)), layers, str(doc.get("description", "")))
    from .layout import LayoutError, NetworkLayout
    try:
        NetworkLayout(net.pairs())
    except LayoutError as exc:
        raise NetworkError(f"{source}: {exc}") from None
    return net


def load_network(path) -> Network:
    path = Path(path)
    return parse_network(path.read_text(), str(path))


def benchmark_text(name: str) -> str:
    if name not in BENCHMARKS:
        raise NetworkError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
    return resources.files("secnpu").joinpath("data").joinpath("benchmarks").joinpath(f"{name}.yaml").read_text()


def load_benchmark(name: str) -> Network:
    return parse_network(benchmark_text(name), f"{name}.yaml")


def single_layer(layer: LayerSpec, schedule: TileSchedule, name: str = "single") -> Network:
    return Network(name, (NetworkLayer(replace(layer, layer_id=1), schedule),))
