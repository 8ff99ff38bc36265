"""Randomized attack campaigns against the functional engine.

Targets are drawn from the honest run's DRAM log so that every injected
mutation touches a block the NPU (or the host's final pass) later consumes.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from .engine import SeculatorEngine
from .memory import AdversaryAction, AdversaryScript, Effect, Trigger
from .network import Network, parse_network

CLASSES = ("tamper", "replay", "swap", "drop")


@dataclass
class ClassOutcome:
    trials: int = 0
    detected: int = 0
    misses: list[str] = field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.detected / self.trials if self.trials else 0.0


@dataclass
class CampaignReport:
    network: str
    seed: int
    outcomes: dict[str, ClassOutcome]

    @property
    def all_detected(self) -> bool:
        return all(o.detected == o.trials for o in self.outcomes.values())

    def rows(self) -> list[dict]:
        return [{"class": c, "trials": o.trials, "detected": o.detected, "rate": round(o.rate, 6)}
                for c, o in self.outcomes.items()]


class TargetPool:
    """Indexes the honest DRAM log for target selection."""

    def __init__(self, log):
        self.reads = [e for e in log if e.direction == "R"]
        self.writes_before: dict[int, list[int]] = defaultdict(list)   # addr -> write seqs
        for e in log:
            if e.direction == "W":
                self.writes_before[e.addr].append(e.seq)
        self.written = sorted(self.writes_before)
        # writes that are consumed by a later read before being overwritten
        self.consumed_writes = []
        last_write: dict[int, int] = {}
        for e in log:
            if e.direction == "W":
                last_write[e.addr] = e.seq
            elif e.addr in last_write:
                self.consumed_writes.append((last_write.pop(e.addr), e.addr))
        # reads whose address already holds >= 2 versions
        self.replayable = [e for e in self.reads if self._versions(e.addr, e.seq) >= 2]

    def _versions(self, addr: int, seq: int) -> int:
        return sum(1 for s in self.writes_before[addr] if s < seq)


def make_action(kind: str, pool: TargetPool, rng: random.Random) -> AdversaryAction:
    if kind == "tamper":
        e = rng.choice(pool.reads)
        mask = bytes([rng.randrange(1, 256)])
        return AdversaryAction(Trigger.AFTER, e.seq, Effect.TAMPER, (e.addr, mask, rng.randrange(64)))
    if kind == "replay":
        if not pool.replayable:
            raise ValueError("network has no block with two versions to replay")
        e = rng.choice(pool.replayable)
        n = pool._versions(e.addr, e.seq)
        return AdversaryAction(Trigger.AFTER, e.seq, Effect.REPLAY, (e.addr, rng.randrange(n - 1)))
    if kind == "swap":
        e = rng.choice(pool.reads)
        others = [a for a in pool.written if a != e.addr and pool._versions(a, e.seq) >= 1]
        return AdversaryAction(Trigger.AFTER, e.seq, Effect.SWAP, (e.addr, rng.choice(others)))
    if kind == "drop":
        seq, addr = rng.choice(pool.consumed_writes)
        return AdversaryAction(Trigger.AFTER, seq, Effect.DROP, (addr,))
    raise ValueError(f"unknown attack class {kind!r}")


def run_campaign(network: Network, trials: int = 1000, classes: Sequence[str] = CLASSES,
                 seed: int = 0, engine: Optional[SeculatorEngine] = None) -> CampaignReport:
    engine = engine or SeculatorEngine(network, seed=seed)
    honest = engine.run()
    if not honest.ok:
        raise RuntimeError(f"honest run failed verification: {honest.first_failure}")
    pool = TargetPool(honest.dram.log)
    rng = random.Random(seed)
    outcomes = {}
    for kind in classes:
        out = ClassOutcome()
        for _ in range(trials):
            action = make_action(kind, pool, rng)
            script = AdversaryScript([action])
            res = engine.run(script, stop_on_fail=True)
            out.trials += 1
            if not res.ok:
                out.detected += 1
            else:
                out.misses.append(action.to_line())
        outcomes[kind] = out
    return CampaignReport(network.name, seed, outcomes)


def campaign_network() -> Network:
    """Small mixed network used by the built-in campaign."""
    text = resources.files("secnpu").joinpath("data").joinpath("campaign.yaml").read_text()
    return parse_network(text, "campaign.yaml")
