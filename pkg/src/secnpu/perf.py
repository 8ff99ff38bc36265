"""Cycle and traffic model over the access traces.

Events that fire at the same loop position form one phase.  A phase costs

    max(compute, transfer) + fetch latency + exposed crypto latency

where transfer covers data and metadata blocks over the DRAM channels, and
the fetch latency is one DRAM round trip (or the slower of the parallel
VN lookups) plus any dependent round trips the scheme adds.  Performance is
the reciprocal of total cycles.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Sequence

from .dataflow import Direction, generate_trace
from .engine import SeculatorEngine
from .layout import NetworkLayout
from .memory import AdversaryScript
from .network import Network
from .schemes import (
    MetadataEffects,
    SchemeConfig,
    SchemeKind,
    make_scheme,
    scheme_kind,
)
from .tables import LayerKind


@dataclass(frozen=True)
class LatencyParams:
    dram_latency_cycles: int = 100
    dram_channels: int = 2
    cycles_per_block: int = 9          # one 64 B burst on one channel
    frequency_ghz: float = 2.75
    pe_rows: int = 32
    pe_cols: int = 32
    cache_hit_cycles: int = 1
    crypto_cycles: int = 20            # AES/SHA pipeline fill per phase
    verify_cycles_per_layer: int = 64

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.dram_channels < 1 or self.pe_rows < 1 or self.pe_cols < 1:
            raise ValueError("channels and PE array dimensions must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def tile_macs(layer, schedule) -> int:
    """Multiply-accumulates performed per loop iteration (one tile step)."""
    k, c, h, w = schedule.K_T, schedule.C_T, schedule.H_T, schedule.W_T
    rs = layer.R * layer.S
    if layer.kind is LayerKind.MATMUL:
        return h * c * w
    if layer.kind in (LayerKind.PREPROC_STYLE1, LayerKind.POOLING):
        return k * h * w * rs
    if layer.kind is LayerKind.PREPROC_STYLE2:
        return c * h * w
    if layer.kind is LayerKind.PREPROC_STYLE3:
        return k * c * h * w
    return k * c * h * w * rs


@dataclass
class LayerReport:
    layer_id: int
    name: str
    cycles: int = 0
    compute_cycles: int = 0
    data_reads: int = 0
    data_writes: int = 0
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
    verification: str = "n/a"

    @property
    def data_transfers(self) -> int:
        return self.data_reads + self.data_writes

    @property
    def meta_transfers(self) -> int:
        return self.meta_reads + self.meta_writes

    @property
    def transfers(self) -> int:
        return self.data_transfers + self.meta_transfers


_SUMMED = ("cycles", "compute_cycles", "data_reads", "data_writes", "meta_reads", "meta_writes",
           "mac_hits", "mac_misses", "ctr_hits", "ctr_misses", "merkle_levels", "host_messages",
           "tensor_table_accesses", "mac_computations", "verifications")


@dataclass
class RunReport:
    network: str
    scheme: str
    layers: list[LayerReport]
    normalized_performance: Optional[float] = None
    verified: Optional[bool] = None
    faults: list[str] = field(default_factory=list)
    tail: MetadataEffects = field(default_factory=MetadataEffects)  # end-of-run cache flushes

    def total(self, name: str) -> int:
        value = sum(getattr(l, name) for l in self.layers)
        if hasattr(self.tail, name):
            value += getattr(self.tail, name)
        return value

    @property
    def cycles(self) -> int:
        return self.total("cycles")

    @property
    def performance(self) -> float:
        return 1.0 / self.cycles if self.cycles else float("inf")

    @property
    def data_transfers(self) -> int:
        return self.total("data_reads") + self.total("data_writes")

    @property
    def meta_transfers(self) -> int:
        return self.total("meta_reads") + self.total("meta_writes")

    @property
    def transfers(self) -> int:
        return self.data_transfers + self.meta_transfers

    def miss_rate(self, cache: str) -> float:
        cache = {"counter": "ctr"}.get(cache, cache)
        hits, misses = self.total(f"{cache}_hits"), self.total(f"{cache}_misses")
        return misses / (hits + misses) if hits + misses else 0.0

    def totals(self) -> dict:
        out = {name: self.total(name) for name in _SUMMED}
        out.update(data_transfers=self.data_transfers, meta_transfers=self.meta_transfers,
                   transfers=self.transfers, mac_miss_rate=round(self.miss_rate("mac"), 6),
                   ctr_miss_rate=round(self.miss_rate("ctr"), 6))
        return out

    def to_dict(self) -> dict:
        return {
            "network": self.network,
            "scheme": self.scheme,
            "normalized_performance": self.normalized_performance,
            "verified": self.verified,
            "faults": list(self.faults),
            "totals": self.totals(),
            "layers": [asdict(l) for l in self.layers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(LayerReport)]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["network", "scheme"] + names)
        for l in self.layers:
            w.writerow([self.network, self.scheme] + [getattr(l, n) for n in names])
        return buf.getvalue()


def _phases(events):
    cur, key = [], object()
    for ev in events:
        k = ev.index if ev.index else ("flush", ev.seq)
        if cur and k != key:
            yield cur
            cur = []
        key = k
        cur.append(ev)
    if cur:
        yield cur


def simulate(network: Network, scheme: SchemeConfig | str = "seculator",
             latency: Optional[LatencyParams] = None, adversary: Optional[AdversaryScript] = None,
             *, functional: bool = True, seed: int = 0) -> RunReport:
    """Replay every layer through one scheme and account cycles and traffic.

    For Seculator the functional engine also runs (crypto, DRAM, optional
    adversary) and its per-layer verification outcome lands in the report;
    a failed check is reported, not raised.
    """
    config = SchemeConfig(scheme=scheme) if isinstance(scheme, str) else scheme
    lat = latency or LatencyParams()
    sch = make_scheme(config)
    layout = NetworkLayout(network.pairs())
    pes = lat.pe_rows * lat.pe_cols
    secure = config.kind is not SchemeKind.BASELINE
    reports = []

    for nl, pl in zip(network.layers, layout.layers):
        lay, sched = nl.layer, nl.schedule
        trace = generate_trace(lay, sched)
        rep = LayerReport(lay.layer_id, lay.name or f"L{lay.layer_id}")
        macs = tile_macs(lay, sched)
        for phase in _phases(trace.events):
            data = meta = 0
            has_read = False
            wait = lat.dram_latency_cycles
            fx_phase = MetadataEffects()
            for ev in phase:
                runs = [(t.base // 64 + s, n) for t, s, n in pl.runs(ev) + pl.halo_runs(ev)]
                nblocks = sum(n for _, n in runs)
                if ev.direction is Direction.READ:
                    rep.data_reads += nblocks
                    has_read = True
                else:
                    rep.data_writes += nblocks
                data += nblocks
                fx_phase += sch.apply(ev, runs)
            if fx_phase.host_messages:
                wait = max(wait, config.host_vn_message_cost)
            if fx_phase.tensor_table_accesses:
                wait = max(wait, config.tensor_table_access_cost)
            chain = fx_phase.serial_round_trips
            meta = fx_phase.meta_transfers
            compute = -(-macs // pes) if any(e.index for e in phase) else 0
            transfer = -(-(data + meta) * lat.cycles_per_block // lat.dram_channels)
            cycles = max(compute, transfer)
            if has_read:
                cycles += wait + chain * lat.dram_latency_cycles
            if secure:
                cycles += lat.crypto_cycles
            rep.cycles += cycles
            rep.compute_cycles += compute
            _add_fx(rep, fx_phase)
        end = sch.end_layer()
        _add_fx(rep, end)
        rep.cycles += end.verifications * lat.verify_cycles_per_layer
        reports.append(rep)

    tail = sch.finish()
    report = RunReport(network.name, config.kind.value, reports, tail=tail)
    # flushing dirty metadata costs bandwidth at the end of the run
    if tail.meta_transfers:
        report.layers[-1].cycles += -(-tail.meta_transfers * lat.cycles_per_block // lat.dram_channels)

    if functional and config.kind is SchemeKind.SECULATOR:
        result = SeculatorEngine(network, seed=seed).run(adversary)
        for rep, res in zip(report.layers, result.verifications):
            rep.verification = res.label
        if len(result.verifications) > len(report.layers) and not result.verifications[-1].ok:
            report.faults.append(f"host final pass: {result.verifications[-1].label}")
        report.faults.extend(result.faults)
        report.verified = result.ok
    return report


def _add_fx(rep: LayerReport, fx: MetadataEffects) -> None:
    for name in ("meta_reads", "meta_writes", "mac_hits", "mac_misses", "ctr_hits", "ctr_misses",
                 "merkle_levels", "host_messages", "tensor_table_accesses", "mac_computations",
                 "verifications"):
        setattr(rep, name, getattr(rep, name) + getattr(fx, name))


def normalize(reports: Sequence[RunReport]) -> list[RunReport]:
    """Fill ``normalized_performance`` against each workload's own baseline."""
    base = {r.network: r for r in reports if r.scheme == SchemeKind.BASELINE.value}
    for r in reports:
        ref = base.get(r.network)
        r.normalized_performance = round(ref.cycles / r.cycles, 6) if ref and r.cycles else None
    return list(reports)


def compare(networks: Sequence[Network], schemes: Sequence[str], latency: Optional[LatencyParams] = None,
            scheme_config: Optional[SchemeConfig] = None, seed: int = 0,
            functional: bool = True) -> list[RunReport]:
    base_cfg = scheme_config or SchemeConfig()
    names = list(dict.fromkeys(scheme_kind(s).value for s in schemes))
    if SchemeKind.BASELINE.value not in names:
        names.insert(0, SchemeKind.BASELINE.value)
    out = []
    for net in networks:
        for s in names:
            out.append(simulate(net, replace(base_cfg, scheme=s), latency, seed=seed,
                                functional=functional))
    normalize(out)
    return [r for r in out if r.scheme in {scheme_kind(s).value for s in schemes}] or out


def comparison_rows(reports: Sequence[RunReport]) -> list[dict]:
    rows = []
    seculator = {r.network: r for r in reports if r.scheme == "seculator"}
    for r in sorted(reports, key=lambda r: (r.network, r.scheme)):
        ref = seculator.get(r.network)
        rows.append({
            "network": r.network,
            "scheme": r.scheme,
            "cycles": r.cycles,
            "normalized_performance": r.normalized_performance,
            "data_transfers": r.data_transfers,
            "meta_transfers": r.meta_transfers,
            "transfers": r.transfers,
            "traffic_vs_seculator": round(r.transfers / ref.transfers, 6) if ref else None,
            "mac_miss_rate": round(r.miss_rate("mac"), 6),
            "ctr_miss_rate": round(r.miss_rate("ctr"), 6),
            "verified": r.verified,
        })
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


WIDTHS = (32, 56, 64, 128, 160, 192)


def widening_study(base: Network, widths: Sequence[int] = WIDTHS,
                   schemes: Sequence[str] = ("baseline", "secure", "tnpu", "guardnn", "seculator"),
                   latency: Optional[LatencyParams] = None,
                   scheme_config: Optional[SchemeConfig] = None,
                   reference: str = "baseline") -> list[dict]:
    """Latency of each widened network relative to the smallest width.

    ``reference="baseline"`` divides every scheme by the unprotected run at
    the first width (one common scale); ``"self"`` divides each scheme by
    its own first-width latency.
    """
    widths = list(widths)
    if not widths or any(b <= a for a, b in zip(widths, widths[1:])):
        raise ValueError("widths must be non-empty and strictly increasing")
    if reference not in ("baseline", "self"):
        raise ValueError("reference must be 'baseline' or 'self'")
    cfg = scheme_config or SchemeConfig()
    names = list(dict.fromkeys(scheme_kind(s).value for s in schemes))
    runs = names if reference == "self" or "baseline" in names else ["baseline"] + names
    cycles: dict[str, list[int]] = {}
    for name in runs:
        cycles[name] = [simulate(base.widened((w, w)), replace(cfg, scheme=name), latency,
                                 functional=False).cycles for w in widths]
    rows = []
    for i, w in enumerate(widths):
        row = {"width": w}
        for name in names:
            ref = cycles[name][0] if reference == "self" else cycles["baseline"][0]
            row[name] = round(cycles[name][i] / ref, 6)
        rows.append(row)
    return rows
