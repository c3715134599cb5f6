"""PRF masking and oblivious transfer.

The PRF is AES-128: the seed keys one ECB block over the 128-bit tag
(j || i, 64 bits each) to derive a per-tag key, which then drives AES-CTR
from a zero counter.  Elements of Z_M are read from the keystream as
ceil((ceil(log2 M) + 64) / 128) consecutive blocks, big-endian, reduced mod M.

Base 1-of-2 OT is the Diffie-Hellman "simplest OT" (Chou-Orlandi), honest-
but-curious variant.  The sender's setup point A is published once per
session; each transfer is then receiver -> sender -> receiver.
1-of-2^d OT encrypts every string under the XOR of d keystreams selected
by the bits of its index, plus a 16-byte zero tag that the receiver checks.
"""

from __future__ import annotations

import functools
import hashlib
import secrets
import struct
from dataclasses import dataclass

import gmpy2
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from . import metrics

SEED_BYTES = 16
TAG_BYTES = 16
KEY_BYTES = 16


class OTError(ValueError):
    pass


def _rng(rng):
    return rng if rng is not None else secrets.SystemRandom()


# -- PRF ---------------------------------------------------------------------

@dataclass(frozen=True)
class PrfSeed:
    seed: bytes

    def __post_init__(self):
        if len(self.seed) != SEED_BYTES:
            raise ValueError("PRF seed must be exactly 128 bits")

    @classmethod
    def random(cls, rng=None) -> "PrfSeed":
        return cls(_rng(rng).getrandbits(128).to_bytes(SEED_BYTES, "big"))

    def halves(self) -> tuple[int, int]:
        return (int.from_bytes(self.seed[:8], "big"), int.from_bytes(self.seed[8:], "big"))

    @classmethod
    def from_halves(cls, hi: int, lo: int) -> "PrfSeed":
        return cls(int(hi).to_bytes(8, "big") + int(lo).to_bytes(8, "big"))


def _tag_block(j: int, i: int) -> bytes:
    if not (0 <= j < 2**64 and 0 <= i < 2**64):
        raise ValueError("PRF tag components must fit in 64 unsigned bits")
    return struct.pack(">QQ", j, i)


@functools.lru_cache(maxsize=4096)
def _ecb(key: bytes):
    return Cipher(algorithms.AES(key), modes.ECB()).encryptor()


def keystream(key: bytes, tag: tuple[int, int], nbytes: int) -> bytes:
    sub = _ecb(key).update(_tag_block(*tag))
    enc = Cipher(algorithms.AES(sub), modes.CTR(bytes(16))).encryptor()
    return enc.update(bytes(nbytes))


def blocks_per_element(M: int) -> int:
    log2m = (M - 1).bit_length()  # ceil(log2 M)
    return -(-(log2m + 64) // 128)


def prf_mask(seed: PrfSeed, tag: tuple[int, int], n: int, M: int) -> list[int]:
    """F(seed, tag): n pseudorandom elements of Z_M."""
    if n < 1:
        raise ValueError("n must be positive")
    metrics.record("prf_calls")
    w = 16 * blocks_per_element(M)
    ks = keystream(seed.seed, tag, n * w)
    return [int.from_bytes(ks[k * w:(k + 1) * w], "big") % M for k in range(n)]


def _xor(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


# -- groups -----------------------------------------------------------------

class P256:
    """NIST P-256; scalar multiplication is delegated to OpenSSL."""

    name = "p256"
    p = 2**256 - 2**224 + 2**192 + 2**96 - 1
    a = -3
    order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
    element_bytes = 33
    _curve = ec.SECP256R1()

    def random_scalar(self, rng) -> int:
        return rng.randrange(1, self.order)

    def base_mul(self, k: int):
        nums = ec.derive_private_key(k, self._curve).public_key().public_numbers()
        return (nums.x, nums.y)

    def _pub(self, P):
        return ec.EllipticCurvePublicNumbers(P[0], P[1], self._curve).public_key()

    def shared(self, k: int, P) -> bytes:
        """Encoding of k*P (x-coordinate; enough as hash input)."""
        return ec.derive_private_key(k, self._curve).exchange(ec.ECDH(), self._pub(P))

    def add(self, P, Q):
        p = self.p
        if P[0] == Q[0]:
            if (P[1] + Q[1]) % p == 0:
                raise OTError("point addition reached the identity")
            lam = (3 * P[0] * P[0] + self.a) * gmpy2.invert(2 * P[1], p) % p
        else:
            lam = (Q[1] - P[1]) * gmpy2.invert(Q[0] - P[0], p) % p
        x = (lam * lam - P[0] - Q[0]) % p
        return (int(x), int((lam * (P[0] - x) - P[1]) % p))

    def neg(self, P):
        return (P[0], (-P[1]) % self.p)

    def encode(self, P) -> bytes:
        return bytes([2 + (P[1] & 1)]) + P[0].to_bytes(32, "big")

    def decode(self, buf: bytes):
        if len(buf) != self.element_bytes:
            raise OTError("malformed point encoding")
        try:
            nums = ec.EllipticCurvePublicKey.from_encoded_point(self._curve, bytes(buf)).public_numbers()
        except ValueError as exc:
            raise OTError(f"point not on curve: {exc}") from None
        return (nums.x, nums.y)


class ModpGroup:
    """Quadratic residues modulo the RFC 3526 2048-bit safe prime."""

    name = "modp2048"
    p = int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
        "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF", 16)
    order = (p - 1) // 2
    g = 4
    element_bytes = 256

    def random_scalar(self, rng) -> int:
        return rng.randrange(1, 2**256)

    def base_mul(self, k: int):
        return gmpy2.powmod(self.g, k, self.p)

    def shared(self, k: int, P) -> bytes:
        return int(gmpy2.powmod(P, k, self.p)).to_bytes(self.element_bytes, "big")

    def add(self, P, Q):
        return P * Q % self.p

    def neg(self, P):
        return gmpy2.invert(P, self.p)

    def encode(self, P) -> bytes:
        return int(P).to_bytes(self.element_bytes, "big")

    def decode(self, buf: bytes):
        if len(buf) != self.element_bytes:
            raise OTError("malformed group element")
        v = gmpy2.mpz(int.from_bytes(buf, "big"))
        if not 1 < v < self.p - 1 or gmpy2.jacobi(v, self.p) != 1:
            raise OTError("element outside the prime-order subgroup")
        return v


GROUPS = {"p256": P256, "modp2048": ModpGroup}


def get_group(name: str = "p256"):
    try:
        return GROUPS[name]()
    except KeyError:
        raise OTError(f"unknown OT group {name!r}") from None


def _kdf(index: int, A: bytes, B: bytes, shared: bytes) -> bytes:
    h = hashlib.sha256(b"forestveil-ot" + struct.pack(">Q", index) + A + B + shared)
    return h.digest()[:KEY_BYTES]


# -- base 1-of-2 OT -----------------------------------------------------------

class BaseOTSender:
    """Sender for a batch of base OTs sharing one setup point."""

    def __init__(self, group=None, rng=None):
        self.group = group or P256()
        self.rng = _rng(rng)
        self._a = self.group.random_scalar(self.rng)
        self._A = self.group.base_mul(self._a)
        self.setup = self.group.encode(self._A)

    def respond(self, index: int, B_bytes: bytes, k0: bytes, k1: bytes) -> bytes:
        metrics.record("ot_base_calls")
        G = self.group
        B = G.decode(B_bytes)
        key0 = _kdf(index, self.setup, B_bytes, G.shared(self._a, B))
        key1 = _kdf(index, self.setup, B_bytes, G.shared(self._a, G.add(B, G.neg(self._A))))
        return _xor(k0, key0) + _xor(k1, key1)


class BaseOTReceiver:
    def __init__(self, setup: bytes, group=None, rng=None):
        self.group = group or P256()
        self.rng = _rng(rng)
        self.setup = setup
        self._A = self.group.decode(setup)
        self._pending: dict[int, tuple[int, bytes, bytes]] = {}

    def choose(self, index: int, bit: int) -> bytes:
        metrics.record("ot_base_calls")
        G = self.group
        r = G.random_scalar(self.rng)
        B = G.base_mul(r)
        if bit:
            B = G.add(self._A, B)
        B_bytes = G.encode(B)
        key = _kdf(index, self.setup, B_bytes, G.shared(r, self._A))
        self._pending[index] = (bit, key, B_bytes)
        return B_bytes

    def finish(self, index: int, response: bytes) -> bytes:
        if len(response) != 2 * KEY_BYTES:
            raise OTError("malformed base-OT response")
        bit, key, _ = self._pending.pop(index)
        e = response[bit * KEY_BYTES:(bit + 1) * KEY_BYTES]
        return _xor(e, key)


def base_ot(k0: bytes, k1: bytes, bit: int, group=None, rng=None) -> bytes:
    """Run one base OT in-process; the receiver's output K_bit is returned."""
    if bit not in (0, 1):
        raise OTError("choice must be a bit")
    sender = BaseOTSender(group, rng)
    receiver = BaseOTReceiver(sender.setup, sender.group, rng)
    msg1 = receiver.choose(0, bit)
    msg2 = sender.respond(0, msg1, k0, k1)
    return receiver.finish(0, msg2)


# -- 1-of-2^d OT -------------------------------------------------------------

def _log2_exact(n: int) -> int:
    if n < 2 or n & (n - 1):
        raise OTError("number of OT strings must be a power of two >= 2")
    return n.bit_length() - 1


def _pad(keys: list[bytes], idx: int, nbytes: int) -> bytes:
    acc = 0
    for j, key in enumerate(keys):
        acc ^= int.from_bytes(keystream(key, (j, idx), nbytes), "big")
    metrics.record("prf_calls", len(keys))
    return acc.to_bytes(nbytes, "big")


class OTNSender:
    """Sender side of one 1-of-2^d transfer.

    ``base_index`` offsets the base-OT indices so many transfers can share
    a single :class:`BaseOTSender`.
    """

    def __init__(self, strings: list[bytes], base: BaseOTSender, base_index: int = 0):
        self.d = _log2_exact(len(strings))
        width = {len(s) for s in strings}
        if len(width) != 1:
            raise OTError("all OT strings must have the same length")
        self.width = width.pop()
        self.base = base
        self.base_index = base_index
        rng = base.rng
        self._keys = [(rng.getrandbits(128).to_bytes(16, "big"), rng.getrandbits(128).to_bytes(16, "big"))
                      for _ in range(self.d)]
        self._strings = strings

    def respond(self, choices: list[bytes]) -> tuple[list[bytes], list[bytes]]:
        if len(choices) != self.d:
            raise OTError(f"expected {self.d} base-OT choices, got {len(choices)}")
        base_msgs = [self.base.respond(self.base_index + j, B, *self._keys[j])
                     for j, B in enumerate(choices)]
        n = self.width + TAG_BYTES
        blobs = []
        for i, x in enumerate(self._strings):
            keys = [self._keys[j][(i >> j) & 1] for j in range(self.d)]
            blobs.append(_xor(x + bytes(TAG_BYTES), _pad(keys, i, n)))
        return base_msgs, blobs


class OTNReceiver:
    def __init__(self, index: int, d: int, base: BaseOTReceiver, base_index: int = 0):
        if d < 1:
            raise OTError("OT arity must be at least 2")
        if not 0 <= index < 2**d:
            raise OTError(f"OT index {index} out of range for 2^{d} strings")
        self.index, self.d = index, d
        self.base, self.base_index = base, base_index
        self._keys: list[bytes] | None = None

    def choose(self) -> list[bytes]:
        return [self.base.choose(self.base_index + j, (self.index >> j) & 1) for j in range(self.d)]

    def finish(self, base_msgs: list[bytes], blobs: list[bytes], index: int | None = None) -> bytes:
        """Recover the chosen string.  ``index`` may name another slot to
        attempt with the same keys; that is expected to fail the tag check."""
        if len(base_msgs) != self.d or len(blobs) != 2**self.d:
            raise OTError("malformed OT response")
        if self._keys is None:
            self._keys = [self.base.finish(self.base_index + j, m) for j, m in enumerate(base_msgs)]
        idx = self.index if index is None else index
        blob = blobs[idx]
        plain = _xor(blob, _pad(self._keys, idx, len(blob)))
        if plain[-TAG_BYTES:] != bytes(TAG_BYTES):
            raise OTError("OT integrity tag mismatch")
        return plain[:-TAG_BYTES]


def ot_n(strings: list[bytes], index: int, group=None, rng=None) -> bytes:
    """In-process 1-of-n OT; returns the receiver's output."""
    d = _log2_exact(len(strings))
    if not 0 <= index < len(strings):
        raise OTError(f"OT index {index} out of range for {len(strings)} strings")
    sender_base = BaseOTSender(group, rng)
    receiver = OTNReceiver(index, d, BaseOTReceiver(sender_base.setup, sender_base.group, rng))
    sender = OTNSender(strings, sender_base)
    base_msgs, blobs = sender.respond(receiver.choose())
    return receiver.finish(base_msgs, blobs)
