"""Experiment configuration: one YAML file with sections.

::

    seed: 0
    output_dir: results
    formats: [json, csv]
    benchmarks: [mobilenet, resnet]    # or `network: path/to/net.yaml`
    schemes: [baseline, tnpu, seculator]
    latency: {dram_latency_cycles: 100}
    scheme_config: {mac_cache_bytes: 8192}
    adversary: attack.txt              # optional
    patterns: {rows: all, shapes_per_row: 100, overrides: {conv-ir-1: "3,2,1"}}
    attack: {trials: 1000, classes: [tamper, replay, swap, drop]}
    widen: {widths: [32, 56, 64, 128, 160, 192], reference: baseline}

Relative paths are resolved against the config file's directory.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .attacks import CLASSES
from .network import BENCHMARKS, NetworkError, load_yaml, strip_lines
from .patterns import PatternTriplet
from .perf import WIDTHS, LatencyParams
from .schemes import ALL_SCHEMES, SchemeConfig, scheme_kind
from .tables import BY_ID


class ConfigError(ValueError):
    pass


@dataclass
class PatternsSection:
    rows: Optional[list[str]] = None          # None = every enumerated row
    shapes_per_row: int = 100
    overrides: dict[str, str] = field(default_factory=dict)


@dataclass
class AttackSection:
    trials: int = 1000
    classes: list[str] = field(default_factory=lambda: list(CLASSES))
    network: Optional[str] = None             # default: the built-in campaign network


@dataclass
class WidenSection:
    widths: list[int] = field(default_factory=lambda: list(WIDTHS))
    reference: str = "baseline"
    network: Optional[str] = None             # default: 32x32x3 conv base layer


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "results"
    formats: list[str] = field(default_factory=lambda: ["json", "csv"])
    network: Optional[str] = None
    benchmarks: list[str] = field(default_factory=lambda: list(BENCHMARKS))
    schemes: list[str] = field(default_factory=lambda: list(ALL_SCHEMES))
    latency: LatencyParams = field(default_factory=LatencyParams)
    scheme_config: SchemeConfig = field(default_factory=SchemeConfig)
    adversary: Optional[str] = None
    patterns: PatternsSection = field(default_factory=PatternsSection)
    attack: AttackSection = field(default_factory=AttackSection)
    widen: WidenSection = field(default_factory=WidenSection)
    source: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        d["scheme_config"].pop("scheme")
        return d

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def resolve(self, path: Optional[str]) -> Optional[Path]:
        if path is None:
            return None
        p = Path(path)
        if not p.is_absolute() and self.source:
            p = Path(self.source).parent / p
        return p


_TOP = {f.name for f in fields(ExperimentConfig)} - {"source"}


def _section(cls, raw, where: str, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: section '{name}' must be a mapping")
    line = raw.get("__line__", "?")
    raw = strip_lines(raw)
    known = {f.name for f in fields(cls)} - {"scheme"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where.split(':')[0]}:{line}: unknown key(s) in '{name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where.split(':')[0]}:{line}: {name}: {exc}") from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        doc = load_yaml(text, source)
    except NetworkError as exc:
        raise ConfigError(str(exc)) from None
    if doc is None:
        doc = {"__line__": 1}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}:1: config must be a mapping")

    def where(key=None):
        node = doc.get(key) if key else None
        line = node.get("__line__") if isinstance(node, dict) else doc.get("__line__", 1)
        return f"{source}:{line}"

    unknown = set(doc) - _TOP - {"__line__"}
    if unknown:
        raise ConfigError(f"{source}:{doc['__line__']}: unknown key(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(source=None if source.startswith("<") else source)
    for key in ("seed",):
        if key in doc:
            if not isinstance(doc[key], int) or isinstance(doc[key], bool):
                raise ConfigError(f"{where()}: seed must be an integer")
            cfg.seed = doc[key]
    for key in ("output_dir", "network", "adversary"):
        if key in doc and doc[key] is not None:
            setattr(cfg, key, str(doc[key]))
    for key in ("formats", "benchmarks", "schemes"):
        if key in doc:
            val = doc[key]
            if isinstance(val, str):
                val = [val]
            if not isinstance(val, list):
                raise ConfigError(f"{where()}: '{key}' must be a list")
            setattr(cfg, key, [str(v) for v in val])
    cfg.latency = _section(LatencyParams, doc.get("latency"), where("latency"), "latency")
    cfg.scheme_config = _section(SchemeConfig, doc.get("scheme_config"), where("scheme_config"), "scheme_config")
    cfg.patterns = _section(PatternsSection, doc.get("patterns"), where("patterns"), "patterns")
    cfg.attack = _section(AttackSection, doc.get("attack"), where("attack"), "attack")
    cfg.widen = _section(WidenSection, doc.get("widen"), where("widen"), "widen")
    if cfg.patterns.rows == "all":
        cfg.patterns.rows = None
    validate(cfg, source)
    return cfg


def validate(cfg: ExperimentConfig, source: str = "<config>") -> ExperimentConfig:
    bad = [f for f in cfg.formats if f not in ("json", "csv")]
    if bad:
        raise ConfigError(f"{source}: unknown report format(s) {bad}; use json or csv")
    for s in cfg.schemes:
        try:
            scheme_kind(s)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    for b in cfg.benchmarks:
        if b not in BENCHMARKS:
            raise ConfigError(f"{source}: unknown benchmark {b!r}; choose from {', '.join(BENCHMARKS)}")
    p = cfg.patterns
    if isinstance(p.rows, str):
        p.rows = [p.rows]
    for r in list(p.rows or []) + list(p.overrides):
        if r not in BY_ID:
            raise ConfigError(f"{source}: unknown table row {r!r}")
    for r, text in p.overrides.items():
        try:
            PatternTriplet.parse(str(text))
        except ValueError as exc:
            raise ConfigError(f"{source}: override for {r}: {exc}") from None
    if p.shapes_per_row < 1:
        raise ConfigError(f"{source}: patterns.shapes_per_row must be >= 1")
    a = cfg.attack
    if a.trials < 1:
        raise ConfigError(f"{source}: attack.trials must be >= 1")
    bad = [c for c in a.classes if c not in CLASSES]
    if bad:
        raise ConfigError(f"{source}: unknown attack class(es) {bad}; choose from {', '.join(CLASSES)}")
    w = cfg.widen
    if not w.widths or any(b <= a for a, b in zip(w.widths, w.widths[1:])):
        raise ConfigError(f"{source}: widen.widths must be non-empty and strictly increasing")
    if w.reference not in ("baseline", "self"):
        raise ConfigError(f"{source}: widen.reference must be 'baseline' or 'self'")
    for key, path in (("network", cfg.network), ("adversary", cfg.adversary),
                      ("attack.network", a.network), ("widen.network", w.network)):
        resolved = cfg.resolve(path)
        if resolved is not None and not resolved.is_file():
            raise ConfigError(f"{source}: {key} file not found: {resolved}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def default_config_text() -> str:
    return ExperimentConfig().to_yaml()
