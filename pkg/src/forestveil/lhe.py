"""Linearly homomorphic encryption over a message group Z_M.

Two backends share one interface:

* Paillier (default): M = N, ciphertexts in Z_{N^2}.
* Joye-Libert: M = 2^k (k = 64 by default), ciphertexts in Z_N.

Signed integers live in Z_M with the usual convention: residues below
ceil(M/2) are non-negative, the upper half holds negative values.
"""

from __future__ import annotations

import secrets
import struct
from fractions import Fraction
from numbers import Rational

import gmpy2
from gmpy2 import mpz

from . import metrics

SUPPORTED_BITS = (1024, 2048, 3072)
DEFAULT_BITS = 2048
SCALE = 1000
FIXED_LIMIT = 1000  # |v| bound for encode_fixed
MAX_WINDOW_BITS = 12

PAILLIER = 1
JOYE_LIBERT = 2
SCHEMES = {"paillier": PAILLIER, "joye-libert": JOYE_LIBERT}

_PK_MAGIC = b"FVPK"
_SK_MAGIC = b"FVSK"


class LHEError(ValueError):
    pass


class EncodingError(LHEError):
    pass


class KeyMismatchError(LHEError):
    pass


class DecodeError(LHEError):
    pass


def _default_rng(rng):
    return rng if rng is not None else secrets.SystemRandom()


# -- byte helpers -----------------------------------------------------------

def int_to_lp(v: int, width: int | None = None) -> bytes:
    """4-byte big-endian length prefix followed by big-endian magnitude."""
    v = int(v)
    if v < 0:
        raise EncodingError("cannot serialize a negative integer")
    if width is None:
        width = max(1, (v.bit_length() + 7) // 8)
    return struct.pack(">I", width) + v.to_bytes(width, "big")


def lp_to_int(buf: bytes, offset: int = 0) -> tuple[int, int]:
    """Parse one length-prefixed integer; returns (value, new_offset)."""
    if len(buf) < offset + 4:
        raise DecodeError("truncated length prefix")
    (w,) = struct.unpack_from(">I", buf, offset)
    end = offset + 4 + w
    if len(buf) < end:
        raise DecodeError("truncated integer body")
    return int.from_bytes(buf[offset + 4:end], "big"), end


# -- signed / fixed-point encoding ------------------------------------------

def to_signed(e: int, M: int) -> int:
    e = int(e) % M
    return e - M if e >= (M + 1) // 2 else e


def from_signed(v: int, M: int) -> int:
    return int(v) % M


def encode_fixed(v, M: int) -> int:
    """Scale a real by 10^3 into Z_M; |v| <= 10^3 with <= 3 decimals."""
    if isinstance(v, Rational):
        q = Fraction(v) * SCALE
        if q.denominator != 1:
            raise EncodingError(f"{v!r} has more than 3 fractional digits")
        s = q.numerator
    else:
        scaled = float(v) * SCALE
        s = round(scaled)
        if abs(scaled - s) > 1e-6:
            raise EncodingError(f"{v!r} has more than 3 fractional digits")
    if abs(s) > FIXED_LIMIT * SCALE:
        raise EncodingError(f"{v!r} outside [-{FIXED_LIMIT}, {FIXED_LIMIT}]")
    return s % M


def decode_fixed(e: int, M: int) -> float:
    return to_signed(e, M) / SCALE


def to_grid(v) -> int:
    """Signed milli-units of a grid value (no modulus)."""
    return to_signed(encode_fixed(v, 1 << 64), 1 << 64)


# -- ciphertexts -------------------------------------------------------------

class Ciphertext:
    """An element of the ciphertext space bound to the key that made it."""

    __slots__ = ("value", "pk")

    def __init__(self, value, pk: "PublicKey"):
        self.value = mpz(value)
        self.pk = pk

    def __eq__(self, other):
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return self.value == other.value and self.pk.n == other.pk.n

    def __hash__(self):
        return hash((int(self.value), int(self.pk.n)))

    def __repr__(self):
        return f"Ciphertext(<{self.pk.ct_bytes} bytes>)"

    def __add__(self, other):
        return self.pk.add(self, other)

    def __rmul__(self, k):
        return self.pk.mul(k, self)

    def to_bytes(self) -> bytes:
        return int_to_lp(self.value, self.pk.ct_bytes)


class PublicKey:
    scheme: int
    n: mpz
    M: int          # message modulus
    ct_modulus: mpz

    @property
    def bits(self) -> int:
        return int(self.n).bit_length()

    @property
    def ct_bytes(self) -> int:
        return (int(self.ct_modulus).bit_length() + 7) // 8

    @property
    def element_bytes(self) -> int:
        """Width of a serialized element of Z_M."""
        return (int(self.M - 1).bit_length() + 7) // 8

    def __eq__(self, other):
        return isinstance(other, PublicKey) and self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())

    def _check(self, c: Ciphertext) -> None:
        if c.pk is not self and c.pk.n != self.n:
            raise KeyMismatchError("ciphertext was produced under a different key")

    # numeric core, implemented per scheme
    def _enc(self, m: int, rng) -> mpz:
        raise NotImplementedError

    def encrypt(self, m: int, rng=None) -> Ciphertext:
        metrics.record("encryptions")
        return Ciphertext(self._enc(int(m) % self.M, _default_rng(rng)), self)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check(a)
        self._check(b)
        metrics.record("hom_adds")
        return Ciphertext(a.value * b.value % self.ct_modulus, self)

    def mul(self, k: int, c: Ciphertext) -> Ciphertext:
        self._check(c)
        metrics.record("scalar_muls")
        k = int(k) % self.M
        if k > self.M // 2:
            inv = gmpy2.invert(c.value, self.ct_modulus)
            return Ciphertext(gmpy2.powmod(inv, self.M - k, self.ct_modulus), self)
        return Ciphertext(gmpy2.powmod(c.value, k, self.ct_modulus), self)

    def window_bits(self, uses: int) -> int:
        """Digit width minimizing table cost 2^w plus ``uses`` products of |M|/w terms."""
        bits = max(1, (self.M - 1).bit_length())
        return min(range(1, MAX_WINDOW_BITS + 1), key=lambda w: 2**w + uses * -(-bits // w))

    def window_table(self, c: Ciphertext, w: int = 4) -> list[mpz]:
        """Powers c^0 .. c^(2^w - 1), for repeated use in :meth:`multi_mul`."""
        self._check(c)
        if not 1 <= w <= MAX_WINDOW_BITS:
            raise LHEError(f"window width {w} out of range")
        mod = self.ct_modulus
        t = [mpz(1), c.value]
        for _ in range(2**w - 2):
            t.append(t[-1] * c.value % mod)
        return t

    def multi_mul(self, ks, cs=None, tables=None) -> Ciphertext:
        """prod_i Mult(k_i, c_i) with one shared squaring chain (fixed windows).

        Counted as len(ks) scalar multiplications and len(ks) - 1 additions,
        the same as the unfused fold.
        """
        if tables is None:
            tables = [self.window_table(c) for c in cs]
        if not ks or len(ks) != len(tables):
            raise LHEError("need one table per scalar")
        w = len(tables[0]).bit_length() - 1
        metrics.record("scalar_muls", len(ks))
        metrics.record("hom_adds", len(ks) - 1)
        mod = self.ct_modulus
        ks = [int(k) % self.M for k in ks]
        mask = 2**w - 1
        nwin = (max(k.bit_length() for k in ks) + w - 1) // w
        digits = [[(k >> (w * i)) & mask for k in ks] for i in range(nwin - 1, -1, -1)]
        acc = mpz(1)
        first = True
        for row in digits:
            if not first:
                acc = gmpy2.powmod(acc, 2**w, mod)
            first = False
            for t, dg in zip(tables, row):
                if dg:
                    acc = acc * t[dg] % mod
        return Ciphertext(acc, self)

    def add_plain(self, c: Ciphertext, k: int, rng=None) -> Ciphertext:
        """c combined with a fresh encryption of the known value k."""
        self._check(c)
        metrics.record("plain_adds")
        e = self._enc(int(k) % self.M, _default_rng(rng))
        return Ciphertext(c.value * e % self.ct_modulus, self)

    def ciphertext_from_bytes(self, buf: bytes, offset: int = 0) -> tuple[Ciphertext, int]:
        v, end = lp_to_int(buf, offset)
        if end - offset - 4 != self.ct_bytes:
            raise DecodeError("ciphertext has the wrong width for this key")
        if not 0 < v < self.ct_modulus:
            raise DecodeError("ciphertext out of range")
        return Ciphertext(v, self), end

    def to_bytes(self) -> bytes:
        raise NotImplementedError


class PaillierPublicKey(PublicKey):
    scheme = PAILLIER

    def __init__(self, n):
        self.n = mpz(n)
        self.nsq = self.n * self.n
        self.ct_modulus = self.nsq
        self.M = int(self.n)

    def _enc(self, m, rng):
        r = mpz(rng.randrange(1, int(self.n)))
        return (1 + m * self.n) * gmpy2.powmod(r, self.n, self.nsq) % self.nsq

    def to_bytes(self) -> bytes:
        return _PK_MAGIC + bytes([PAILLIER]) + int_to_lp(self.n)


class JoyeLibertPublicKey(PublicKey):
    scheme = JOYE_LIBERT

    def __init__(self, n, y, k: int):
        self.n = mpz(n)
        self.y = mpz(y)
        self.k = int(k)
        self.ct_modulus = self.n
        self.M = 1 << self.k
        self._two_k = mpz(1) << self.k

    def _enc(self, m, rng):
        x = mpz(rng.randrange(1, int(self.n)))
        return gmpy2.powmod(self.y, m, self.n) * gmpy2.powmod(x, self._two_k, self.n) % self.n

    def to_bytes(self) -> bytes:
        return (_PK_MAGIC + bytes([JOYE_LIBERT]) + int_to_lp(self.n)
                + int_to_lp(self.y) + int_to_lp(self.k))


class SecretKey:
    def __init__(self, pk: PublicKey, p, q):
        self.pk = pk
        self.p = mpz(p)
        self.q = mpz(q)
        if self.p * self.q != pk.n:
            raise LHEError("factors do not match the public modulus")
        if pk.scheme == PAILLIER:
            self._init_paillier()
        else:
            self._init_jl()

    def _init_paillier(self):
        p, q, n = self.p, self.q, self.pk.n
        self.psq, self.qsq = p * p, q * q
        g = n + 1
        self.hp = gmpy2.invert((gmpy2.powmod(g, p - 1, self.psq) - 1) // p, p)
        self.hq = gmpy2.invert((gmpy2.powmod(g, q - 1, self.qsq) - 1) // q, q)
        self.q_inv_p = gmpy2.invert(q, p)

    _JL_WINDOW = 8

    def _init_jl(self):
        p, k, w = self.p, self.pk.k, self._JL_WINDOW
        self.p_prime = (p - 1) >> k
        D = gmpy2.powmod(self.pk.y, self.p_prime, p)    # order 2^k
        self.d_inv = gmpy2.invert(D, p)
        # digit lookup: G^v -> v for G = D^(2^(k - wi)) of order 2^wi
        self._jl_lookup = {}
        for wi in {min(w, k - i) for i in range(0, k, w)}:
            G = gmpy2.powmod(D, mpz(1) << (k - wi), p)
            acc, table = mpz(1), {}
            for v in range(1 << wi):
                table[acc] = v
                acc = acc * G % p
            self._jl_lookup[wi] = table
        self._jl_steps = [gmpy2.powmod(self.d_inv, mpz(1) << i, p) for i in range(0, k, w)]

    def decrypt(self, c: Ciphertext) -> int:
        self.pk._check(c)
        metrics.record("decryptions")
        if self.pk.scheme == PAILLIER:
            return self._dec_paillier(c.value)
        return self._dec_jl(c.value)

    def decrypt_signed(self, c: Ciphertext) -> int:
        return to_signed(self.decrypt(c), self.pk.M)

    def _dec_paillier(self, c) -> int:
        p, q = self.p, self.q
        mp = (gmpy2.powmod(c, p - 1, self.psq) - 1) // p * self.hp % p
        mq = (gmpy2.powmod(c, q - 1, self.qsq) - 1) // q * self.hq % q
        return int(mq + q * ((mp - mq) * self.q_inv_p % p))

    def _dec_jl(self, c) -> int:
        """Pohlig-Hellman in the order-2^k subgroup, w bits per step."""
        p, k, w = self.p, self.pk.k, self._JL_WINDOW
        C = gmpy2.powmod(c, self.p_prime, p)
        m = 0
        for step, i in enumerate(range(0, k, w)):
            wi = min(w, k - i)
            t = gmpy2.powmod(C, mpz(1) << (k - i - wi), p)
            digit = self._jl_lookup[wi].get(t)
            if digit is None:
                raise DecodeError("ciphertext is not a valid encryption under this key")
            if digit:
                m |= digit << i
                C = C * gmpy2.powmod(self._jl_steps[step], digit, p) % p
        return m

    def to_bytes(self) -> bytes:
        return _SK_MAGIC + self.pk.to_bytes() + int_to_lp(self.p) + int_to_lp(self.q)


# -- key generation --------------------------------------------------------

def _random_prime(bits: int, rng, congruent=None) -> mpz:
    while True:
        cand = mpz(rng.getrandbits(bits)) | (mpz(1) << (bits - 1)) | 1
        if congruent is not None:
            mod, res = congruent
            cand = cand - cand % mod + res
            if cand.bit_length() != bits:
                continue
        if gmpy2.is_prime(cand, 40):
            return cand


def _jl_prime(bits: int, k: int, rng) -> mpz:
    # p = 2^k * p' + 1
    while True:
        pp = mpz(rng.getrandbits(bits - k)) | (mpz(1) << (bits - k - 1))
        p = (pp << k) + 1
        if p.bit_length() == bits and gmpy2.is_prime(p, 40):
            return p


def keygen(security_bits: int = DEFAULT_BITS, scheme: str = "paillier", rng=None,
           k: int = 64) -> tuple[PublicKey, SecretKey]:
    """Generate a key pair with a ``security_bits``-bit public modulus."""
    if security_bits not in SUPPORTED_BITS:
        raise LHEError(f"unsupported key size {security_bits}; choose from {SUPPORTED_BITS}")
    if scheme not in SCHEMES:
        raise LHEError(f"unknown scheme {scheme!r}")
    rng = _default_rng(rng)
    half = security_bits // 2
    if scheme == "paillier":
        while True:
            p = _random_prime(half, rng)
            q = _random_prime(half, rng)
            n = p * q
            if p != q and n.bit_length() == security_bits and gmpy2.gcd(n, (p - 1) * (q - 1)) == 1:
                break
        pk = PaillierPublicKey(n)
        return pk, SecretKey(pk, p, q)
    if not 1 <= k <= half // 4:
        raise LHEError("message bit-length k too large for this modulus")
    while True:
        p = _jl_prime(half, k, rng)
        q = _random_prime(half, rng, congruent=(4, 3))
        n = p * q
        if n.bit_length() == security_bits:
            break
    while True:
        y = mpz(rng.randrange(2, int(n)))
        if gmpy2.legendre(y, p) == -1 and gmpy2.legendre(y, q) == -1:
            break
    pk = JoyeLibertPublicKey(n, y, k)
    return pk, SecretKey(pk, p, q)


def public_key_from_bytes(buf: bytes, offset: int = 0) -> tuple[PublicKey, int]:
    if buf[offset:offset + 4] != _PK_MAGIC or len(buf) < offset + 5:
        raise DecodeError("not a public key")
    scheme = buf[offset + 4]
    off = offset + 5
    if scheme == PAILLIER:
        n, off = lp_to_int(buf, off)
        return PaillierPublicKey(n), off
    if scheme == JOYE_LIBERT:
        n, off = lp_to_int(buf, off)
        y, off = lp_to_int(buf, off)
        k, off = lp_to_int(buf, off)
        return JoyeLibertPublicKey(n, y, k), off
    raise DecodeError(f"unknown scheme id {scheme}")


def secret_key_from_bytes(buf: bytes) -> SecretKey:
    if buf[:4] != _SK_MAGIC:
        raise DecodeError("not a secret key")
    pk, off = public_key_from_bytes(buf, 4)
    p, off = lp_to_int(buf, off)
    q, off = lp_to_int(buf, off)
    if off != len(buf):
        raise DecodeError("trailing bytes after secret key")
    return SecretKey(pk, p, q)


def load_public_key(path) -> PublicKey:
    with open(path, "rb") as f:
        buf = f.read()
    pk, off = public_key_from_bytes(buf)
    if off != len(buf):
        raise DecodeError("trailing bytes after public key")
    return pk


def load_secret_key(path) -> SecretKey:
    with open(path, "rb") as f:
        return secret_key_from_bytes(f.read())


# -- functional aliases -----------------------------------------------------

def encrypt(pk: PublicKey, m: int, rng=None) -> Ciphertext:
    return pk.encrypt(m, rng)


def decrypt(sk: SecretKey, c: Ciphertext) -> int:
    return sk.decrypt(c)


def hom_add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    if a.pk.n != b.pk.n:
        raise KeyMismatchError("operands were encrypted under different keys")
    return a.pk.add(a, b)


def scalar_mul(k: int, c: Ciphertext) -> Ciphertext:
    return c.pk.mul(k, c)


def add_plain(c: Ciphertext, k: int, rng=None) -> Ciphertext:
    return c.pk.add_plain(c, k, rng)
