"""Command-line harness: ``secnpu {patterns,attack,compare,dump-config}``.

Every run writes ``summary.json`` into the output directory; the exit
status is 1 when any check of the suite fails and 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .attacks import campaign_network, run_campaign
from .config import ConfigError, ExperimentConfig, load_config, validate
from .dataflow import DataflowError, LayerSpec, TileSchedule
from .engine import SeculatorEngine
from .memory import AdversaryScriptError, load_script
from .network import Network, NetworkError, load_benchmark, load_network, single_layer
from .patterns import PatternTriplet, check_row
from .perf import compare, comparison_rows, rows_to_csv, widening_study
from .tables import BY_ID, ROWS

OUT_ENV = "SECNPU_OUT"
log = logging.getLogger("secnpu")


# -- helpers -------------------------------------------------------------------

def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.format:
        cfg.formats = [args.format]
    if args.out:
        cfg.output_dir = args.out
    elif os.environ.get(OUT_ENV):
        cfg.output_dir = os.environ[OUT_ENV]
    return validate(cfg, args.config or "<defaults>")


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_table(out: Path, stem: str, rows: list[dict], formats: Sequence[str]) -> list[str]:
    written = []
    if "csv" in formats:
        (out / f"{stem}.csv").write_text(rows_to_csv(rows))
        written.append(f"{stem}.csv")
    if "json" in formats:
        (out / f"{stem}.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
        written.append(f"{stem}.json")
    return written


def _write_summary(out: Path, summary: dict) -> None:
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _print_table(rows: list[dict], cols: Sequence[str]) -> None:
    if not rows:
        print("(no rows)")
        return
    cells = [[("" if r.get(c) is None else str(r.get(c))) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    print("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for row in cells:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)))


def _networks(cfg: ExperimentConfig) -> list[Network]:
    if cfg.network:
        return [load_network(cfg.resolve(cfg.network))]
    return [load_benchmark(b) for b in cfg.benchmarks]


def widening_base() -> Network:
    """The 32x32x3 base convolution that layer widening scales up."""
    layer = LayerSpec("conv", 3, 3, 32, 32, 3, 3, name="base")
    return single_layer(layer, TileSchedule.for_row("conv-or-2", K_T=1, C_T=3, H_T=8, W_T=32), "widen-base")


# -- subcommands ---------------------------------------------------------------

def cmd_patterns(cfg: ExperimentConfig) -> int:
    p = cfg.patterns
    ids = [r.row_id for r in ROWS] if p.rows is None else list(p.rows)
    rng = random.Random(cfg.seed)
    rows, failed = [], 0
    if not ids:
        log.warning("patterns: empty row selection; nothing to check")
    for rid in ids:
        override = PatternTriplet.parse(p.overrides[rid]) if rid in p.overrides else None
        res = check_row(BY_ID[rid], p.shapes_per_row, rng, override)
        failed += not res.ok
        rows.append({"row": rid, "table": BY_ID[rid].table, "shapes": res.shapes,
                     "mismatches": res.mismatches, "status": "pass" if res.ok else "fail",
                     "first_divergence": res.divergence, "detail": res.first_failure or ""})
    out = _out_dir(cfg)
    files = _write_table(out, "patterns", rows, cfg.formats)
    _print_table(rows, ("row", "shapes", "mismatches", "status", "first_divergence"))
    ok = failed == 0
    _write_summary(out, {"command": "patterns", "ok": ok, "seed": cfg.seed, "rows": len(rows),
                         "failed_rows": failed, "vacuous": not ids, "files": files})
    return 0 if ok else 1


def _attack_network(cfg: ExperimentConfig) -> Network:
    if cfg.attack.network:
        return load_network(cfg.resolve(cfg.attack.network))
    if cfg.network:
        return load_network(cfg.resolve(cfg.network))
    return campaign_network()


def cmd_attack(cfg: ExperimentConfig) -> int:
    net = _attack_network(cfg)
    out = _out_dir(cfg)
    if cfg.adversary:
        script = load_script(cfg.resolve(cfg.adversary))
        res = SeculatorEngine(net, seed=cfg.seed).run(script)
        rows = [{"layer": v.layer_id, "verification": v.label} for v in res.verifications]
        files = _write_table(out, "attack", rows, cfg.formats)
        _print_table(rows, ("layer", "verification"))
        detected = not res.ok
        print(f"adversary script: {len(script.actions)} action(s), "
              f"{'detected' if detected else 'not detected'}")
        _write_summary(out, {"command": "attack", "ok": True, "seed": cfg.seed, "network": net.name,
                             "mode": "script", "actions": len(script.actions), "detected": detected,
                             "faults": res.faults, "files": files})
        return 0
    report = run_campaign(net, cfg.attack.trials, cfg.attack.classes, cfg.seed)
    rows = report.rows()
    files = _write_table(out, "attack", rows, cfg.formats)
    _print_table(rows, ("class", "trials", "detected", "rate"))
    misses = {c: o.misses[:10] for c, o in report.outcomes.items() if o.misses}
    _write_summary(out, {"command": "attack", "ok": report.all_detected, "seed": cfg.seed,
                         "network": net.name, "mode": "campaign", "detection": rows,
                         "missed_examples": misses, "files": files})
    return 0 if report.all_detected else 1


def cmd_compare(cfg: ExperimentConfig, widen: bool = False) -> int:
    out = _out_dir(cfg)
    if widen:
        base = load_network(cfg.resolve(cfg.widen.network)) if cfg.widen.network else widening_base()
        rows = widening_study(base, cfg.widen.widths, cfg.schemes, cfg.latency, cfg.scheme_config,
                              reference=cfg.widen.reference)
        files = _write_table(out, "widen", rows, cfg.formats)
        _print_table(rows, ["width"] + [k for k in rows[0] if k != "width"])
        _write_summary(out, {"command": "compare", "mode": "widen", "ok": True, "seed": cfg.seed,
                             "base": base.name, "reference": cfg.widen.reference, "files": files})
        return 0
    reports = compare(_networks(cfg), cfg.schemes, cfg.latency, cfg.scheme_config, seed=cfg.seed)
    rows = comparison_rows(reports)
    files = _write_table(out, "compare", rows, cfg.formats)
    runs = out / "runs"
    runs.mkdir(exist_ok=True)
    for r in reports:
        stem = f"{r.network}-{r.scheme}"
        if "json" in cfg.formats:
            (runs / f"{stem}.json").write_text(r.to_json() + "\n")
        if "csv" in cfg.formats:
            (runs / f"{stem}.csv").write_text(r.to_csv())
    _print_table(rows, ("network", "scheme", "normalized_performance", "traffic_vs_seculator",
                        "mac_miss_rate", "ctr_miss_rate", "verified"))
    failures = [f"{r.network}: {r.faults or 'verification failed'}" for r in reports if r.verified is False]
    ok = not failures
    _write_summary(out, {"command": "compare", "mode": "suite", "ok": ok, "seed": cfg.seed,
                         "rows": len(rows), "failures": failures, "files": files})
    return 0 if ok else 1


def cmd_dump_config(cfg: ExperimentConfig) -> int:
    sys.stdout.write(cfg.to_yaml())
    return 0


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", metavar="DIR", help=f"output directory (else ${OUT_ENV}, else config)")
    common.add_argument("--format", choices=("csv", "json"), help="write only this report format")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="secnpu", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("patterns", parents=[common], help="VN pattern oracle-equivalence suite")
    sub.add_parser("attack", parents=[common], help="attack campaign or scripted adversary")
    cmp_ = sub.add_parser("compare", parents=[common], help="traffic/performance across schemes")
    cmp_.add_argument("--widen", action="store_true", help="run the layer-widening study instead")
    sub.add_parser("dump-config", parents=[common], help="print the effective config with all defaults")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    cfg = None
    try:
        cfg = _effective_config(args)
        if args.command == "patterns":
            return cmd_patterns(cfg)
        if args.command == "attack":
            return cmd_attack(cfg)
        if args.command == "compare":
            return cmd_compare(cfg, widen=args.widen)
        return cmd_dump_config(cfg)
    except (ConfigError, NetworkError, DataflowError, AdversaryScriptError, OSError) as exc:
        print(f"secnpu: error: {exc}", file=sys.stderr)
        if args.command != "dump-config":
            where = cfg.output_dir if cfg else (args.out or os.environ.get(OUT_ENV) or "results")
            try:
                out = Path(where)
                out.mkdir(parents=True, exist_ok=True)
                _write_summary(out, {"command": args.command, "ok": False, "error": str(exc)})
            except OSError:
                pass
        return 2


if __name__ == "__main__":
    sys.exit(main())
