"""Untrusted DRAM and a scripted adversary that mutates it between accesses."""
from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

BLOCK_BYTES = 64
ZERO_BLOCK = bytes(BLOCK_BYTES)


class DramError(Exception):
    pass


class UnmappedAddress(DramError):
    pass


class AdversaryScriptError(ValueError):
    pass


class Effect(str, enum.Enum):
    TAMPER = "tamper"
    REPLAY = "replay"
    SWAP = "swap"
    DROP = "drop"


class Trigger(str, enum.Enum):
    AFTER = "after"   # once N accesses have completed
    AT = "at"         # on the first access to an address


@dataclass(frozen=True)
class LogEntry:
    seq: int
    addr: int
    direction: str
    cycle: Optional[int] = None
    dropped: bool = False


@dataclass(frozen=True)
class Mutation:
    seq: int
    action: "AdversaryAction"
    applied: bool
    note: str = ""


class UntrustedDram:
    """Block store outside the trust boundary.

    Only ciphertext is ever written here.  Regions are zero-filled when
    mapped; every write is kept in a per-address history so an adversary can
    replay stale versions.
    """

    def __init__(self, regions: Iterable[tuple[int, int]] = ()):
        self._regions: list[tuple[int, int]] = []
        self.blocks: dict[int, bytes] = {}
        self.history: dict[int, list[bytes]] = {}
        self.log: list[LogEntry] = []
        self.mutations: list[Mutation] = []
        self.pending_drops: set[int] = set()
        self.adversary: Optional["AdversaryScript"] = None
        for base, size in regions:
            self.map(base, size)

    def map(self, base: int, size: int) -> None:
        if base % BLOCK_BYTES or size % BLOCK_BYTES or size <= 0:
            raise ValueError("regions must be block-aligned and non-empty")
        bisect.insort(self._regions, (base, base + size))

    def is_mapped(self, addr: int) -> bool:
        i = bisect.bisect_right(self._regions, (addr, float("inf"))) - 1
        return i >= 0 and self._regions[i][0] <= addr < self._regions[i][1]

    def _check(self, addr: int) -> None:
        if addr % BLOCK_BYTES:
            raise UnmappedAddress(f"address {addr:#x} is not block-aligned")
        if not self.is_mapped(addr):
            raise UnmappedAddress(f"address {addr:#x} is not mapped")

    def peek(self, addr: int) -> bytes:
        self._check(addr)
        return self.blocks.get(addr, ZERO_BLOCK)

    def poke(self, addr: int, data: bytes) -> None:
        """Adversary-side store: no log entry, no history."""
        self._check(addr)
        self.blocks[addr] = bytes(data)

    def _before(self, addr: int, direction: str) -> None:
        if self.adversary is not None:
            run_adversary(self.adversary, self, (len(self.log), addr, direction))

    def write(self, addr: int, data: bytes, cycle: Optional[int] = None) -> None:
        self._check(addr)
        if len(data) != BLOCK_BYTES:
            raise ValueError("DRAM writes are whole blocks")
        self._before(addr, "W")
        dropped = addr in self.pending_drops
        if dropped:
            self.pending_drops.discard(addr)
        else:
            self.blocks[addr] = bytes(data)
            self.history.setdefault(addr, []).append(bytes(data))
        self.log.append(LogEntry(len(self.log), addr, "W", cycle, dropped))

    def read(self, addr: int, cycle: Optional[int] = None) -> bytes:
        self._check(addr)
        self._before(addr, "R")
        self.log.append(LogEntry(len(self.log), addr, "R", cycle))
        return self.blocks.get(addr, ZERO_BLOCK)

    dram_write = write
    dram_read = read


@dataclass
class AdversaryAction:
    trigger: Trigger
    trigger_arg: int
    effect: Effect
    args: tuple = ()
    fired: bool = False

    def matches(self, seq: int, addr: int) -> bool:
        if self.fired:
            return False
        if self.trigger is Trigger.AFTER:
            return seq >= self.trigger_arg
        return addr == self.trigger_arg

    def to_line(self) -> str:
        parts = [self.trigger.value, _fmt(self.trigger_arg), self.effect.value]
        for a in self.args:
            parts.append(a.hex() if isinstance(a, bytes) else _fmt(a))
        return ",".join(parts)


def _fmt(v: int) -> str:
    return hex(v) if v >= 4096 else str(v)


@dataclass
class AdversaryScript:
    actions: list[AdversaryAction] = field(default_factory=list)

    def validate(self, dram: Optional[UntrustedDram] = None) -> "AdversaryScript":
        for n, act in enumerate(self.actions, 1):
            addrs = list(act.args[:2] if act.effect is Effect.SWAP else act.args[:1])
            if act.trigger is Trigger.AT:
                addrs.append(act.trigger_arg)
            for a in addrs:
                if a % BLOCK_BYTES:
                    raise AdversaryScriptError(f"action {n}: address {a:#x} is not block-aligned")
                if dram is not None and not dram.is_mapped(a):
                    raise AdversaryScriptError(f"action {n}: address {a:#x} is not mapped")
        return self

    def reset(self) -> None:
        for act in self.actions:
            act.fired = False

    def to_text(self) -> str:
        return "".join(a.to_line() + "\n" for a in self.actions)


_ARITY = {Effect.TAMPER: (2, 3), Effect.REPLAY: (2, 2), Effect.SWAP: (2, 2), Effect.DROP: (1, 1)}


def parse_action(line: str, lineno: int = 0) -> AdversaryAction:
    parts = [p.strip() for p in line.split(",")]
    where = f"line {lineno}: " if lineno else ""
    if len(parts) < 3:
        raise AdversaryScriptError(f"{where}expected trigger_kind,trigger_arg,effect_kind,...")
    try:
        trigger = Trigger(parts[0].lower())
        effect = Effect(parts[2].lower())
    except ValueError as exc:
        raise AdversaryScriptError(f"{where}{exc}") from None
    lo, hi = _ARITY[effect]
    args = parts[3:]
    if not lo <= len(args) <= hi:
        raise AdversaryScriptError(f"{where}{effect.value} takes {lo}-{hi} arguments, got {len(args)}")
    try:
        targ = int(parts[1], 0)
        if effect is Effect.TAMPER:
            mask = bytes.fromhex(args[1].removeprefix("0x"))
            if not 0 < len(mask) <= BLOCK_BYTES:
                raise ValueError("tamper mask must be 1-64 bytes")
            conv = (int(args[0], 0), mask) + ((int(args[2], 0),) if len(args) == 3 else ())
        else:
            conv = tuple(int(a, 0) for a in args)
    except ValueError as exc:
        raise AdversaryScriptError(f"{where}{exc}") from None
    return AdversaryAction(trigger, targ, effect, conv)


def parse_script(text: str) -> AdversaryScript:
    actions = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            actions.append(parse_action(line, lineno))
    return AdversaryScript(actions)


def load_script(path) -> AdversaryScript:
    with open(path) as fh:
        return parse_script(fh.read())


def _apply(act: AdversaryAction, dram: UntrustedDram) -> tuple[bool, str]:
    if act.effect is Effect.TAMPER:
        addr, mask = act.args[0], act.args[1]
        offset = act.args[2] if len(act.args) > 2 else 0
        if offset + len(mask) > BLOCK_BYTES:
            return False, "mask runs past the block"
        cur = bytearray(dram.peek(addr))
        for i, m in enumerate(mask):
            cur[offset + i] ^= m
        dram.poke(addr, bytes(cur))
        return True, ""
    if act.effect is Effect.REPLAY:
        addr, snap = act.args
        versions = dram.history.get(addr, [])
        if not 0 <= snap < len(versions):
            return False, f"no snapshot {snap} of {addr:#x}"
        dram.poke(addr, versions[snap])
        return True, ""
    if act.effect is Effect.SWAP:
        a, b = act.args
        va, vb = dram.peek(a), dram.peek(b)
        dram.poke(a, vb)
        dram.poke(b, va)
        return True, ""
    dram.pending_drops.add(act.args[0])
    return True, ""


def run_adversary(script: AdversaryScript, dram: UntrustedDram, event: tuple[int, int, str]) -> list[Mutation]:
    """Apply every not-yet-fired action whose trigger matches ``event``.

    ``event`` is ``(access_seq, addr, direction)`` of the access about to be
    served.  Each action fires at most once; outcomes go to ``dram.mutations``.
    """
    seq, addr, _ = event
    done = []
    for act in script.actions:
        if act.matches(seq, addr):
            act.fired = True
            applied, note = _apply(act, dram)
            m = Mutation(seq, act, applied, note)
            dram.mutations.append(m)
            done.append(m)
    return done
