import io
import itertools
import os
import random

import pytest
from hypothesis import given, settings, strategies as st

from secnpu.crypto import (
    AccumulatorBank,
    BlockAddress,
    CounterPair,
    CounterReuse,
    MacAccumulatorSet,
    PadRegistry,
    SessionKey,
    aes128_encrypt,
    block_mac,
    check_vectors,
    crypt_many,
    decrypt_block,
    encrypt_block,
    fold,
    format_vector,
    mac_preimage,
    pad_for,
    parse_vector,
    verify_layer,
    write_vectors,
)

# FIPS-197 appendix C.1 and appendix B
FIPS197 = [
    ("000102030405060708090a0b0c0d0e0f", "00112233445566778899aabbccddeeff", "69c4e0d86a7b0430d8cdb78070b4c55a"),
    ("2b7e151628aed2a6abf7158809cf4f3c", "3243f6a8885a308d313198a2e0370734", "3925841d02dc09fbdc118597196a0b32"),
]

# SP 800-38A F.5.1, CTR-AES128.Encrypt
CTR_KEY = "2b7e151628aed2a6abf7158809cf4f3c"
CTR_VECTORS = [
    ("f0f1f2f3f4f5f6f7f8f9fafbfcfdfeff", "6bc1bee22e409f96e93d7e117393172a", "874d6191b620e3261bef6864990db6ce"),
    ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff00", "ae2d8a571e03ac9c9eb76fac45af8e51", "9806f66b7970fdff8617187bb9fffdff"),
    ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff01", "30c81c46a35ce411e5fbc1191a0a52ef", "5ae4df3edbd5d35e5b4f09020db03eab"),
    ("f0f1f2f3f4f5f6f7f8f9fafbfcfdff02", "f69f2445df4f9b17ad2b417be66c3710", "1e031dda2fbe03d1792170a0f3009cee"),
]

KEY = SessionKey(bytes(range(16)), bytes(8))


@pytest.mark.parametrize("key,pt,ct", FIPS197)
def test_aes_fips197(key, pt, ct):
    assert aes128_encrypt(bytes.fromhex(key), bytes.fromhex(pt)).hex() == ct


@pytest.mark.parametrize("ctr,pt,ct", CTR_VECTORS)
def test_aes_ctr_sp800_38a(ctr, pt, ct):
    pad = aes128_encrypt(bytes.fromhex(CTR_KEY), bytes.fromhex(ctr))
    got = bytes(a ^ b for a, b in zip(bytes.fromhex(pt), pad))
    assert got.hex() == ct


def test_counter_layout():
    c = CounterPair.of(BlockAddress(layer=2, fmap=7, index=5), vn=3)
    assert c.major == bytes.fromhex("0000000700000002")
    assert c.minor == bytes.fromhex("0000000300000005")
    assert c.lane_block(3) == bytes.fromhex("0000000700000002" "00000003" "00000017")


def test_session_key_halves():
    k = SessionKey(bytes(range(16)), b"\xaa" * 8)
    assert k.key == bytes(range(8)) + b"\xaa" * 8
    with pytest.raises(ValueError):
        SessionKey(b"short", bytes(8))
    assert SessionKey.new(bytes(16), random.Random(1)) == SessionKey.new(bytes(16), random.Random(1))


def test_pad_is_four_aes_blocks():
    a = BlockAddress(1, 2, 3)
    c = CounterPair.of(a, 4)
    want = b"".join(aes128_encrypt(KEY.key, c.lane_block(l)) for l in range(4))
    assert pad_for(a, 4, KEY) == want


def test_encrypt_rejects_bad_input():
    with pytest.raises(ValueError):
        encrypt_block(bytes(10), BlockAddress(0, 0, 0), 1, KEY)
    with pytest.raises(ValueError):
        encrypt_block(bytes(64), BlockAddress(0, 0, 0), 0, KEY)
    with pytest.raises(ValueError):
        BlockAddress(0, 0, 1 << 30)


def test_crypt_many_matches_single_block():
    rng = random.Random(3)
    addrs = [BlockAddress(1, rng.randrange(8), i) for i in range(20)]
    plain = [rng.randbytes(64) for _ in addrs]
    batch = crypt_many(plain, addrs, 5, KEY)
    assert batch == [encrypt_block(p, a, 5, KEY) for p, a in zip(plain, addrs)]
    assert crypt_many(batch, addrs, 5, KEY) == plain


@settings(max_examples=60, deadline=None)
@given(data=st.binary(min_size=64, max_size=64), layer=st.integers(0, 2**32 - 1),
       fmap=st.integers(0, 2**32 - 1), index=st.integers(0, 2**30 - 1), vn=st.integers(1, 2**32 - 1))
def test_ctr_roundtrip_property(data, layer, fmap, index, vn):
    a = BlockAddress(layer, fmap, index)
    assert decrypt_block(encrypt_block(data, a, vn, KEY), a, vn, KEY) == data


def test_mac_preimage_layout():
    a = BlockAddress(layer=1, fmap=2, index=4)
    pre = mac_preimage(a, 3, bytes(range(64)), bytes([9]) * 16)
    assert pre == bytes([9]) * 16 + bytes.fromhex("00000001" "00000002" "00000003" "00000004") + bytes(range(64))
    assert len(pre) == 96


def test_mac_binds_every_field():
    a = BlockAddress(1, 2, 3)
    data, secret = os.urandom(64), os.urandom(16)
    base = block_mac(a, 1, data, secret)
    variants = [
        block_mac(BlockAddress(2, 2, 3), 1, data, secret),
        block_mac(BlockAddress(1, 3, 3), 1, data, secret),
        block_mac(BlockAddress(1, 2, 4), 1, data, secret),
        block_mac(a, 2, data, secret),
        block_mac(a, 1, bytes(64), secret),
        block_mac(a, 1, data, bytes(16)),
    ]
    assert base not in variants


def test_xor_fold_order_independent_all_perms():
    rng = random.Random(5)
    macs = [rng.randbytes(32) for _ in range(6)]
    values = set()
    for perm in itertools.permutations(macs):
        acc = MacAccumulatorSet()
        for m in perm:
            acc.fold("w", m)
        values.add(acc.w)
    assert len(values) == 1


def test_functional_fold_leaves_input():
    acc = MacAccumulatorSet()
    out = fold(acc, "r", b"\x01" * 32)
    assert acc.r == 0 and out.r == int.from_bytes(b"\x01" * 32, "big")
    with pytest.raises(ValueError):
        acc.fold("x", 1)


def _balanced(prev_w_macs, reads_back, first_reads):
    bank = AccumulatorBank()
    prev = bank.start(1)
    for m in prev_w_macs:
        prev.fold("w", m)
    for m in reads_back:
        prev.fold("r", m)
    cur = bank.start(2)
    for m in first_reads:
        cur.fold("fr", m)
        cur.fold("ir", m)
    return prev, cur


def test_verify_layer_balance():
    # tile written at VN1 then VN2; VN1 read back; VN2 is the first read of layer 2
    v1, v2 = b"\x11" * 32, b"\x22" * 32
    prev, cur = _balanced([v1, v2], [v1], [v2])
    res = verify_layer(prev, cur)
    assert res.ok and res.label == "Pass" and res.layer_id == 2


def test_verify_layer_detects_stale_first_read():
    v1, v2 = b"\x11" * 32, b"\x22" * 32
    prev, cur = _balanced([v1, v2], [v1], [v1])
    res = verify_layer(prev, cur)
    assert not res.ok and "MAC_W" in res.failed


def test_verify_layer_ir_parity():
    prev, cur = _balanced([b"\x01" * 32], [], [b"\x01" * 32])
    cur.ir ^= 5
    assert verify_layer(prev, cur).failed == ("MAC_IR",)
    # even read counts cancel in IR
    prev, cur = _balanced([b"\x01" * 32], [], [b"\x01" * 32])
    cur.ifmap_reads_odd = False
    cur.fold("ir", b"\x01" * 32)
    assert verify_layer(prev, cur).ok


def test_verify_layer_weight_digest():
    prev, cur = _balanced([], [], [])
    cur.weight_digest = 7
    cur.wfr = 7
    cur.ir = 7
    assert verify_layer(prev, cur).ok
    cur.wfr = cur.ir = 8
    assert verify_layer(prev, cur).failed == ("MAC_WFR",)


def test_bank_alternates_two_sets():
    bank = AccumulatorBank()
    a = bank.start(1)
    a.fold("w", 3)
    b = bank.start(2)
    assert bank.for_layer(1) is a and b is not a and a.w == 3
    c = bank.start(3)
    assert c is a and c.w == 0 and c.previous_layer_id == 2


def test_pad_registry_rejects_reuse():
    reg = PadRegistry()
    reg.issue(BlockAddress(1, 0, 0), 1)
    reg.issue(BlockAddress(1, 0, 0), 2)
    with pytest.raises(CounterReuse):
        reg.issue(BlockAddress(1, 0, 0), 1)


def test_vector_file_roundtrip(tmp_path):
    rng = random.Random(9)
    lines = [format_vector(rng.randbytes(16), BlockAddress(rng.randrange(9), rng.randrange(9), i),
                          rng.randrange(1, 9), rng.randbytes(64)) for i in range(5)]
    path = tmp_path / "v.txt"
    with path.open("w") as fh:
        write_vectors(lines, fh)
    with path.open() as fh:
        assert check_vectors(fh) == []
    secret, addr, vn, data, mac = parse_vector(lines[0])
    assert block_mac(addr, vn, data, secret) == mac
    broken = lines[1][:-1] + ("0" if lines[1][-1] != "0" else "1")
    assert check_vectors(io.StringIO("# header\n" + lines[0] + "\n" + broken + "\n")) == [3]
