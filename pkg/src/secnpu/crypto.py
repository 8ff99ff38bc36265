"""Counter-mode block encryption, per-block MACs and XOR-MAC accumulators.

Pads are four AES-128 blocks over ``major || minor`` counters where
major = F(4) || L(4) and minor = VN(4) || (I*4 + lane)(4), all big-endian.
Per-block MACs are SHA-256 over ``P(16) || L(4) || F(4) || VN(4) || I(4) || B(64)``.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

BLOCK_BYTES = 64
MAC_BYTES = 32
LANES = 4
_U32 = 0xFFFFFFFF


class CounterReuse(AssertionError):
    """A (major, minor) counter pair was issued twice in one session."""


@dataclass(frozen=True)
class BlockAddress:
    layer: int
    fmap: int
    index: int
    addr: int = 0

    def __post_init__(self):
        for name in ("layer", "fmap", "index"):
            v = getattr(self, name)
            if not 0 <= v <= _U32:
                raise ValueError(f"{name}={v} does not fit 32 bits")
        if self.index >= 1 << 30:
            raise ValueError("block index must stay below 2**30 (lane bits)")


@dataclass(frozen=True)
class CounterPair:
    major: bytes
    minor: bytes

    @classmethod
    def of(cls, addr: BlockAddress, vn: int) -> "CounterPair":
        return cls(struct.pack(">II", addr.fmap, addr.layer), struct.pack(">II", vn, addr.index))

    def lane_block(self, lane: int) -> bytes:
        vn, index = struct.unpack(">II", self.minor)
        return self.major + struct.pack(">II", vn, index * LANES + lane)


@dataclass(frozen=True)
class SessionKey:
    """Accelerator secret id ``P`` (16 bytes) plus a per-boot random half.

    The AES key is the first half of ``P`` followed by the 8-byte boot random.
    """

    secret: bytes
    boot_random: bytes

    def __post_init__(self):
        if len(self.secret) != 16:
            raise ValueError("accelerator secret id must be 16 bytes")
        if len(self.boot_random) != 8:
            raise ValueError("boot random must be 8 bytes")

    @property
    def key(self) -> bytes:
        return self.secret[:8] + self.boot_random

    @classmethod
    def new(cls, secret: bytes, rng: Optional[random.Random] = None) -> "SessionKey":
        rng = rng or random.SystemRandom()
        return cls(secret, rng.getrandbits(64).to_bytes(8, "big"))


@lru_cache(maxsize=16)
def _ecb(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB())


def aes128_encrypt(key: bytes, block: bytes) -> bytes:
    """Single-block AES-128 (ECB); exposed for known-answer tests."""
    enc = _ecb(key).encryptor()
    return enc.update(block) + enc.finalize()


def pad_for(addr: BlockAddress, vn: int, key: SessionKey) -> bytes:
    ctr = CounterPair.of(addr, vn)
    return aes128_encrypt(key.key, b"".join(ctr.lane_block(l) for l in range(LANES)))


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def encrypt_block(plain: bytes, addr: BlockAddress, vn: int, key: SessionKey) -> bytes:
    if len(plain) != BLOCK_BYTES:
        raise ValueError(f"blocks are {BLOCK_BYTES} bytes, got {len(plain)}")
    if vn < 1:
        raise ValueError("VN must be >= 1")
    return _xor(plain, pad_for(addr, vn, key))


decrypt_block = encrypt_block


def crypt_many(blocks: Sequence[bytes], addrs: Sequence[BlockAddress], vn: int, key: SessionKey) -> list[bytes]:
    """Encrypt (or decrypt) several blocks sharing one VN with a single AES call."""
    if vn < 1:
        raise ValueError("VN must be >= 1")
    ctrs = b"".join(CounterPair.of(a, vn).lane_block(l) for a in addrs for l in range(LANES))
    pads = aes128_encrypt(key.key, ctrs) if ctrs else b""
    return [_xor(b, pads[i * BLOCK_BYTES:(i + 1) * BLOCK_BYTES]) for i, b in enumerate(blocks)]


def mac_preimage(addr: BlockAddress, vn: int, data: bytes, secret: bytes) -> bytes:
    if len(secret) != 16 or len(data) != BLOCK_BYTES:
        raise ValueError("MAC preimage needs a 16-byte secret and a 64-byte block")
    return secret + struct.pack(">IIII", addr.layer, addr.fmap, vn, addr.index) + data


def block_mac(addr: BlockAddress, vn: int, data: bytes, secret: bytes) -> bytes:
    return hashlib.sha256(mac_preimage(addr, vn, data, secret)).digest()


REGISTERS = ("w", "r", "fr", "ir", "wfr")


@dataclass
class MacAccumulatorSet:
    """XOR registers of one layer.

    ``w``/``r`` fold ofmap writes and partial-sum reads, ``fr`` first reads of
    the ifmap, ``ir`` every read of read-only data (ifmap and weights) and
    ``wfr`` first reads of weights.  The expectation fields are filled by the
    host/engine: read-count parities and the host's weight digest.
    """

    w: int = 0
    r: int = 0
    fr: int = 0
    ir: int = 0
    wfr: int = 0
    active_layer_id: Optional[int] = None
    previous_layer_id: Optional[int] = None
    ifmap_reads_odd: bool = True
    weight_reads_odd: bool = True
    weight_digest: Optional[int] = None

    def fold(self, register: str, mac) -> "MacAccumulatorSet":
        reg = register.lower()
        if reg not in REGISTERS:
            raise ValueError(f"unknown register {register!r}")
        value = int.from_bytes(mac, "big") if isinstance(mac, (bytes, bytearray)) else int(mac)
        setattr(self, reg, getattr(self, reg) ^ value)
        return self

    def clear(self, layer_id: Optional[int] = None) -> None:
        prev = self.active_layer_id
        for reg in REGISTERS:
            setattr(self, reg, 0)
        self.previous_layer_id = prev
        self.active_layer_id = layer_id
        self.ifmap_reads_odd = self.weight_reads_odd = True
        self.weight_digest = None

    def value(self, register: str) -> bytes:
        return getattr(self, register.lower()).to_bytes(MAC_BYTES, "big")


def fold(acc: MacAccumulatorSet, register: str, mac) -> MacAccumulatorSet:
    """Functional fold: returns a new set with ``register ^= mac``."""
    out = MacAccumulatorSet(**{k: getattr(acc, k) for k in acc.__dataclass_fields__})
    return out.fold(register, mac)


@dataclass(frozen=True)
class VerificationResult:
    layer_id: Optional[int]
    ok: bool
    failed: tuple[str, ...] = ()

    def __bool__(self):
        return self.ok

    @property
    def label(self) -> str:
        return "Pass" if self.ok else "Fail(" + ",".join(self.failed) + ")"


def verify_layer(acc_prev: MacAccumulatorSet, acc_cur: MacAccumulatorSet) -> VerificationResult:
    """Check layer i (``acc_prev``) against the reads of layer i+1 (``acc_cur``).

    The write/read balance ``W(i) == FR(i+1) ^ R(i)`` must hold, and the
    read-only registers of layer i+1 must agree with its first reads.
    The result carries the id of layer i+1, whose end triggers the check.
    """
    failed = []
    if acc_prev.w != acc_cur.fr ^ acc_prev.r:
        failed.append("MAC_W")
    expected_ir = (acc_cur.fr if acc_cur.ifmap_reads_odd else 0) ^ \
        (acc_cur.wfr if acc_cur.weight_reads_odd else 0)
    if acc_cur.ir != expected_ir:
        failed.append("MAC_IR")
    if acc_cur.weight_digest is not None and acc_cur.wfr != acc_cur.weight_digest:
        failed.append("MAC_WFR")
    return VerificationResult(acc_cur.active_layer_id, not failed, tuple(failed))


class AccumulatorBank:
    """The two register sets that alternate across layers."""

    def __init__(self):
        self.sets = (MacAccumulatorSet(), MacAccumulatorSet())

    def for_layer(self, layer_id: int) -> MacAccumulatorSet:
        return self.sets[layer_id % 2]

    def start(self, layer_id: int) -> MacAccumulatorSet:
        acc = self.for_layer(layer_id)
        acc.clear(layer_id)
        acc.previous_layer_id = layer_id - 1
        return acc


class PadRegistry:
    """Test-build check that no counter pair is issued twice in a session."""

    def __init__(self):
        self.seen: set[tuple[int, int, int, int]] = set()

    def issue(self, addr: BlockAddress, vn: int) -> None:
        key = (addr.fmap, addr.layer, vn, addr.index)
        if key in self.seen:
            raise CounterReuse(f"counter reused: F={addr.fmap} L={addr.layer} VN={vn} I={addr.index}")
        self.seen.add(key)


# test-vector file: hex(P),L,F,VN,I,hex(B) -> hex(MAC)
def format_vector(secret: bytes, addr: BlockAddress, vn: int, data: bytes) -> str:
    mac = block_mac(addr, vn, data, secret)
    return f"{secret.hex()},{addr.layer},{addr.fmap},{vn},{addr.index},{data.hex()} -> {mac.hex()}"


def parse_vector(line: str) -> tuple[bytes, BlockAddress, int, bytes, bytes]:
    lhs, sep, rhs = line.partition("->")
    if not sep:
        raise ValueError(f"missing '->' in vector line {line!r}")
    p, l, f, vn, i, b = (x.strip() for x in lhs.split(","))
    return (bytes.fromhex(p), BlockAddress(int(l), int(f), int(i)), int(vn),
            bytes.fromhex(b), bytes.fromhex(rhs.strip()))


def write_vectors(lines: Iterable[str], fh) -> None:
    for line in lines:
        fh.write(line + "\n")


def check_vectors(fh) -> list[int]:
    """Line numbers whose recorded MAC does not match a recomputation."""
    bad = []
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        secret, addr, vn, data, mac = parse_vector(line)
        if block_mac(addr, vn, data, secret) != mac:
            bad.append(lineno)
    return bad
