"""Functional model of the protected NPU: every tile access goes through
encryption, MAC folding and the per-layer verification at the trust boundary.

Blocks carry synthetic payloads (no tensor arithmetic); what matters is that
every value written is bound to its ``(L, F, I, VN)`` and every value read is
checked through the XOR accumulators.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field
from typing import Optional

from .crypto import (
    AccumulatorBank,
    BlockAddress,
    PadRegistry,
    SessionKey,
    VerificationResult,
    block_mac,
    crypt_many,
    verify_layer,
)
from .dataflow import Direction, Role, generate_trace, tiles_in_layer
from .layout import BlockRef, NetworkLayout
from .memory import AdversaryScript, UntrustedDram
from .network import Network
from .patterns import FirstReadDetector, PatternExhausted, VnState, reads_per_tile

DEFAULT_SECRET = bytes(range(16))


def payload(seed: int, ref: BlockRef, vn: int) -> bytes:
    return hashlib.blake2b(struct.pack(">QIIII", seed, ref.layer, ref.fmap, ref.index, vn),
                           digest_size=64).digest()


def _baddr(ref: BlockRef) -> BlockAddress:
    return BlockAddress(ref.layer, ref.fmap, ref.index, ref.addr)


@dataclass
class StorageSample:
    layer_id: int
    peak_entries: int
    tiles: int


@dataclass
class EngineResult:
    verifications: list[VerificationResult]
    storage: list[StorageSample]
    dram: UntrustedDram
    faults: list[str] = field(default_factory=list)
    mac_computations: int = 0

    @property
    def ok(self) -> bool:
        return not self.faults and all(v.ok for v in self.verifications)

    @property
    def first_failure(self) -> Optional[VerificationResult]:
        return next((v for v in self.verifications if not v.ok), None)


class SeculatorEngine:
    """Replays a network's traces through the protected memory path.

    ``layout`` and the session key are fixed per engine so repeated runs
    (honest and adversarial) see identical addresses and ciphertexts.
    """

    def __init__(self, network: Network, key: Optional[SessionKey] = None, *,
                 secret: bytes = DEFAULT_SECRET, seed: int = 0, check_pads: bool = False):
        self.network = network
        self.layout = NetworkLayout(network.pairs())
        self.seed = seed
        self.key = key or SessionKey.new(secret, random.Random(seed))
        self.secret = self.key.secret
        self.check_pads = check_pads
        self.traces = [generate_trace(nl.layer, nl.schedule) for nl in network.layers]
        self.event_blocks = [[pl.blocks(ev) for ev in tr.events]
                             for pl, tr in zip(self.layout.layers, self.traces)]
        self._wmemo: dict = {}
        self._rmemo: dict = {}

    # -- block-level helpers -------------------------------------------------
    # Encryption and MACs are pure functions of (block, VN, bytes); the memo
    # tables only spare recomputation across repeated runs of one engine.
    def _write(self, refs, vn, acc, register="w"):
        if self.check_pads:
            for r in refs:
                self._pads.issue(_baddr(r), vn)
        todo = [r for r in refs if (r, vn) not in self._wmemo]
        if todo:
            addrs = [_baddr(r) for r in todo]
            plain = [payload(self.seed, r, vn) for r in todo]
            for r, a, p, ct in zip(todo, addrs, plain, crypt_many(plain, addrs, vn, self.key)):
                self._wmemo[(r, vn)] = (ct, int.from_bytes(block_mac(a, vn, p, self.secret), "big"))
        for r in refs:
            ct, mac = self._wmemo[(r, vn)]
            self.dram.write(r.addr, ct)
            acc.fold(register, mac)
        self._macs += len(refs)

    def _read(self, refs, vn, acc, *registers):
        cts = [self.dram.read(r.addr) for r in refs]
        todo = [(r, ct) for r, ct in zip(refs, cts) if (r, vn, ct) not in self._rmemo]
        if todo:
            addrs = [_baddr(r) for r, _ in todo]
            plain = crypt_many([ct for _, ct in todo], addrs, vn, self.key)
            for (r, ct), a, p in zip(todo, addrs, plain):
                self._rmemo[(r, vn, ct)] = int.from_bytes(block_mac(a, vn, p, self.secret), "big")
        for r, ct in zip(refs, cts):
            mac = self._rmemo[(r, vn, ct)]
            for reg in registers:
                acc.fold(reg, mac)
        self._macs += len(refs)

    # -- run -----------------------------------------------------------------
    def run(self, adversary: Optional[AdversaryScript] = None, stop_on_fail: bool = False) -> EngineResult:
        self.dram = UntrustedDram(self.layout.regions())
        if adversary is not None:
            adversary.reset()
            adversary.validate(self.dram)
            self.dram.adversary = adversary
        self._pads = PadRegistry()
        self._macs = 0
        bank = AccumulatorBank()
        results: list[VerificationResult] = []
        storage: list[StorageSample] = []
        faults: list[str] = []

        # host: input tensor (layer 0) and per-layer weights
        host = bank.start(0)
        self._write(self.layout.input.refs(), 1, host)
        digests = {}
        for pl in self.layout.layers:
            if pl.weight is not None:
                scratch = AccumulatorBank().start(pl.layer.layer_id)
                self._write(pl.weight.refs(), 1, scratch)
                digests[pl.layer.layer_id] = scratch.w

        in_vn = 1
        for nl, pl, trace, blocks in zip(self.network.layers, self.layout.layers,
                                         self.traces, self.event_blocks):
            lid = nl.layer.layer_id
            acc = bank.start(lid)
            acc.ifmap_reads_odd = reads_per_tile(nl.layer, nl.schedule, Role.IFMAP) % 2 == 1
            if pl.weight is not None:
                acc.weight_digest = digests[lid]
                acc.weight_reads_odd = reads_per_tile(nl.layer, nl.schedule, Role.WEIGHT) % 2 == 1
            tiles = tiles_in_layer(nl.layer, nl.schedule, Role.OFMAP)
            wstate = VnState(nl.triplet(Direction.WRITE), track=True, tile_limit=tiles)
            rstate = VnState(nl.triplet(Direction.READ), track=True, tile_limit=tiles)
            first_if = FirstReadDetector(nl.layer, nl.schedule, Role.IFMAP)
            first_w = FirstReadDetector(nl.layer, nl.schedule, Role.WEIGHT) if pl.weight else None
            try:
                for ev, refs in zip(trace.events, blocks):
                    role = ev.tile.role
                    if role is Role.IFMAP:
                        regs = ("ir", "fr") if first_if(ev) else ("ir",)
                        self._read(refs, in_vn, acc, *regs)
                    elif role is Role.WEIGHT:
                        regs = ("ir", "wfr") if first_w(ev) else ("ir",)
                        self._read(refs, 1, acc, *regs)
                    elif ev.direction is Direction.READ:
                        self._read(refs, rstate.next_vn(ev.tile), acc, "r")
                    else:
                        self._write(refs, wstate.next_vn(ev.tile), acc, "w")
                if wstate.remaining or rstate.remaining:
                    raise PatternExhausted(
                        f"layer {lid}: traffic ended with {wstate.remaining} write / "
                        f"{rstate.remaining} read VNs unused")
            except PatternExhausted as exc:
                faults.append(str(exc))
                results.append(VerificationResult(lid, False, ("PATTERN",)))
                break
            storage.append(StorageSample(lid, max(wstate.peak_entries, rstate.peak_entries), tiles))
            res = verify_layer(bank.for_layer(lid - 1), acc)
            results.append(res)
            if stop_on_fail and not res.ok:
                break
            in_vn = wstate.triplet.kappa
        else:
            # host-side final read pass over the network outputs
            last = len(self.network.layers)
            term = bank.start(last + 1)
            self._read(self.layout.output.refs(), in_vn, term, "fr", "ir")
            results.append(verify_layer(bank.for_layer(last), term))

        return EngineResult(results, storage, self.dram, faults, self._macs)


def honest_run(network: Network, seed: int = 0, **kw) -> EngineResult:
    return SeculatorEngine(network, seed=seed, **kw).run()
