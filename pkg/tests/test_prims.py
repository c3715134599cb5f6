import math
import random

import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given, settings
from hypothesis import strategies as st

from forestveil import metrics, prims


def _ecb(key, block):
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor().update(block)


def reference_mask(seed: bytes, j: int, i: int, n: int, M: int) -> list[int]:
    """Independent rebuild: ECB subkey, then ECB over big-endian counter blocks."""
    sub = _ecb(seed, j.to_bytes(8, "big") + i.to_bytes(8, "big"))
    per = math.ceil((math.ceil(math.log2(M)) + 64) / 128)
    out = []
    for e in range(n):
        blob = b"".join(_ecb(sub, (e * per + b).to_bytes(16, "big")) for b in range(per))
        out.append(int.from_bytes(blob, "big") % M)
    return out


def test_prf_deterministic_and_tag_separated(rng):
    seed = prims.PrfSeed.random(rng)
    M = 2**64
    assert prims.prf_mask(seed, (1, 1), 5, M) == prims.prf_mask(seed, (1, 1), 5, M)
    assert prims.prf_mask(seed, (1, 1), 5, M) != prims.prf_mask(seed, (1, 2), 5, M)


@pytest.mark.parametrize("M", [2**64, 2**1024 - 105, 3 * 2**200 + 1])
def test_prf_known_answer(M):
    zero = prims.PrfSeed(bytes(16))
    assert prims.prf_mask(zero, (0, 0), 6, M) == reference_mask(bytes(16), 0, 0, 6, M)
    seed = bytes(range(16))
    assert prims.prf_mask(prims.PrfSeed(seed), (3, 7), 4, M) == reference_mask(seed, 3, 7, 4, M)


def test_prf_zero_seed_vector():
    # pinned first element of the all-zero-seed, tag (0, 0) vector in Z_{2^64}
    zero = prims.PrfSeed(bytes(16))
    v = prims.prf_mask(zero, (0, 0), 1, 2**64)[0]
    assert v == reference_mask(bytes(16), 0, 0, 1, 2**64)[0]
    assert 0 <= v < 2**64


def test_prf_counts_calls(rng):
    seed = prims.PrfSeed.random(rng)
    with metrics.counting() as c:
        prims.prf_mask(seed, (1, 1), 30, 2**64)
    assert c.total("prf_calls") == 1


def test_seed_halves_roundtrip(rng):
    s = prims.PrfSeed.random(rng)
    assert prims.PrfSeed.from_halves(*s.halves()) == s
    with pytest.raises(ValueError):
        prims.PrfSeed(b"short")
    with pytest.raises(ValueError):
        prims.prf_mask(s, (-1, 0), 1, 2**64)


@pytest.mark.parametrize("group", ["p256", "modp2048"])
def test_base_ot(group, rng):
    G = prims.get_group(group)
    k0, k1 = b"\x00" * 16, b"\x11" * 16
    assert prims.base_ot(k0, k1, 0, G, rng) == k0
    assert prims.base_ot(k0, k1, 1, G, rng) == k1
    for _ in range(100 if group == "p256" else 10):
        a, b = rng.randbytes(16), rng.randbytes(16)
        bit = rng.randint(0, 1)
        assert prims.base_ot(a, b, bit, G, rng) == (a, b)[bit]


def test_base_ot_two_messages(rng):
    sender = prims.BaseOTSender(rng=rng)
    receiver = prims.BaseOTReceiver(sender.setup, rng=rng)
    msg1 = receiver.choose(0, 1)
    msg2 = sender.respond(0, msg1, b"a" * 16, b"b" * 16)
    assert receiver.finish(0, msg2) == b"b" * 16


def test_malformed_group_elements(rng):
    with pytest.raises(prims.OTError):
        prims.P256().decode(b"\x02" + b"\xff" * 32)
    with pytest.raises(prims.OTError):
        prims.P256().decode(b"\x02" * 5)
    G = prims.ModpGroup()
    with pytest.raises(prims.OTError):
        G.decode((G.p - 1).to_bytes(256, "big"))
    sender = prims.BaseOTSender(rng=rng)
    with pytest.raises(prims.OTError):
        sender.respond(0, b"\x05" + bytes(32), bytes(16), bytes(16))
    with pytest.raises(prims.OTError):
        prims.get_group("nope")


def test_ot_n_examples(rng):
    assert prims.ot_n([b"A", b"B"], 1, rng=rng) == b"B"
    strings = [rng.randbytes(2048) for _ in range(8)]
    assert prims.ot_n(strings, 4, rng=rng) == strings[4]


@pytest.mark.parametrize("d", range(1, 11))
def test_ot_n_correct_up_to_d10(d, rng):
    strings = [rng.randbytes(24) for _ in range(2**d)]
    idxs = range(2**d) if d <= 4 else rng.sample(range(2**d), 3)
    for i in idxs:
        assert prims.ot_n(strings, i, rng=rng) == strings[i]


def test_ot_n_other_index_fails_tag(rng):
    strings = [rng.randbytes(64) for _ in range(8)]
    base = prims.BaseOTSender(rng=rng)
    rec = prims.OTNReceiver(5, 3, prims.BaseOTReceiver(base.setup, rng=rng))
    msgs, blobs = prims.OTNSender(strings, base).respond(rec.choose())
    assert rec.finish(msgs, blobs) == strings[5]
    for j in range(8):
        if j != 5:
            with pytest.raises(prims.OTError):
                rec.finish(msgs, blobs, index=j)


def test_ot_n_out_of_range_aborts_before_messages(rng):
    with metrics.counting() as c:
        with pytest.raises(prims.OTError):
            prims.ot_n([b"x"] * 4, 4, rng=rng)
        with pytest.raises(prims.OTError):
            prims.ot_n([b"x"] * 4, -1, rng=rng)
    assert c.total("ot_base_calls") == 0
    with pytest.raises(prims.OTError):
        prims.ot_n([b"x"] * 3, 0, rng=rng)
    with pytest.raises(prims.OTError):
        prims.ot_n([b"x", b"yy"], 0, rng=rng)


@pytest.mark.parametrize("d", [1, 3, 6])
def test_ot_n_uses_d_base_ots(d, rng):
    strings = [bytes(16)] * 2**d
    base = prims.BaseOTSender(rng=rng)
    rec = prims.OTNReceiver(0, d, prims.BaseOTReceiver(base.setup, rng=rng))
    snd = prims.OTNSender(strings, base)
    with metrics.counting() as c:
        with metrics.acting("receiver"):
            choices = rec.choose()
        with metrics.acting("sender"):
            resp = snd.respond(choices)
        with metrics.acting("receiver"):
            rec.finish(*resp)
    assert c.get("receiver", "ot_base_calls") == d
    assert c.get("sender", "ot_base_calls") == d
    # one pad per string on the sender side, d keystreams each
    assert c.get("sender", "prf_calls") == d * 2**d
    assert c.get("receiver", "prf_calls") == d


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.data())
def test_ot_n_property(d, data):
    r = random.Random(data.draw(st.integers(0, 2**32)))
    i = data.draw(st.integers(0, 2**d - 1))
    strings = [r.randbytes(17) for _ in range(2**d)]
    assert prims.ot_n(strings, i, rng=r) == strings[i]
