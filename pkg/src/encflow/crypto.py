"""Desk-scale stand-ins for the four encryption schemes.

The type system relies only on algebraic contracts: det preserves equality,
ope preserves order, ah is additively homomorphic and rnd round-trips with
fresh randomness.  These constructions keep those contracts exactly; they are
not meant to be secure at these parameter sizes.
"""
from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd
from typing import Optional, Union

import sympy

Value = Union[int, str, bytes]
SCHEMES = ("rnd", "det", "ope", "ah")
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1

_TAG_INT, _TAG_STR, _TAG_BYTES = 0x01, 0x02, 0x03


class CryptoError(ValueError):
    pass


# ------------------------------------------------------------------ encoding


def encode_value(v: Value) -> bytes:
    """Injective; order-preserving on int64 (sign bit flipped, big-endian)."""
    if isinstance(v, bool) or not isinstance(v, (int, str, bytes)):
        raise CryptoError(f"unsupported value {v!r}")
    if isinstance(v, int):
        if not INT64_MIN <= v <= INT64_MAX:
            raise CryptoError(f"integer out of int64 range: {v}")
        return bytes([_TAG_INT]) + struct.pack(">Q", v + 2**63)
    if isinstance(v, str):
        raw = v.encode("utf-8")
        return bytes([_TAG_STR]) + struct.pack(">I", len(raw)) + raw
    return bytes([_TAG_BYTES]) + struct.pack(">I", len(v)) + v


def decode_value(b: bytes) -> Value:
    if not b:
        raise CryptoError("malformed encoding: empty")
    tag = b[0]
    if tag == _TAG_INT:
        if len(b) != 9:
            raise CryptoError("malformed integer encoding")
        return struct.unpack(">Q", b[1:])[0] - 2**63
    if tag in (_TAG_STR, _TAG_BYTES):
        if len(b) < 5:
            raise CryptoError("malformed length prefix")
        (n,) = struct.unpack(">I", b[1:5])
        if len(b) != 5 + n:
            raise CryptoError("length prefix does not match payload")
        raw = b[5:]
        if tag == _TAG_BYTES:
            return raw
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CryptoError("malformed utf-8 payload") from e
    raise CryptoError(f"unknown value tag {tag}")


# ---------------------------------------------------------------------- keys


@dataclass(frozen=True)
class Key:
    key_id: str
    scheme: str
    material: bytes = field(repr=False)
    # Paillier only: public modulus and private (lambda, mu)
    n: Optional[int] = None
    private: Optional[tuple[int, int]] = field(default=None, repr=False)


def _material(seed: int, key_id: str, scheme: str) -> bytes:
    return hashlib.blake2b(f"{seed}:{key_id}:{scheme}".encode(), digest_size=32).digest()


@lru_cache(maxsize=256)
def keygen(scheme: str, key_id: str, seed: int, ah_bits: int = 256) -> Key:
    if scheme not in SCHEMES:
        raise CryptoError(f"unknown scheme {scheme!r}")
    material = _material(seed, key_id, scheme)
    if scheme != "ah":
        return Key(key_id, scheme, material)
    rng = random.Random(material)
    half = ah_bits // 2
    while True:
        p = sympy.nextprime(rng.getrandbits(half) | (1 << (half - 1)))
        q = sympy.nextprime(rng.getrandbits(half) | (1 << (half - 1)))
        n = p * q
        phi = (p - 1) * (q - 1)
        if p != q and gcd(n, phi) == 1:
            break
    return Key(key_id, scheme, material, n=n, private=(phi, pow(phi, -1, n)))


class KeyStore:
    """Key ids mapped to keys.  Default keys ``_det``, ``_ope``, ``_rnd``,
    ``_ah`` are derived from the store seed on first use."""

    def __init__(self, specs: Optional[dict[str, tuple[str, int]]] = None, seed: int = 0,
                 ah_bits: int = 256):
        self.specs = dict(specs or {})
        self.seed = seed
        self.ah_bits = ah_bits

    def get(self, key_id: str, scheme: str) -> Key:
        if key_id in self.specs:
            s, seed = self.specs[key_id]
            if s != scheme:
                raise CryptoError(f"key {key_id} is a {s} key, not {scheme}")
        elif key_id == f"_{scheme}":
            seed = self.seed
        else:
            raise CryptoError(f"unknown key {key_id}")
        return keygen(scheme, key_id, seed, self.ah_bits)

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "KeyStore":
        specs = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            try:
                kid, rest = line.split("=", 1)
                scheme, sd = rest.split(":", 1)
                specs[kid.strip()] = (scheme.strip().lower(), int(sd))
            except ValueError:
                raise CryptoError(f"malformed key line {lineno}: {line!r}") from None
            if specs[kid.strip()][0] not in SCHEMES:
                raise CryptoError(f"unknown scheme on key line {lineno}")
        return cls(specs, seed)

    def render(self) -> str:
        return "".join(f"{k}={s}:{sd}\n" for k, (s, sd) in sorted(self.specs.items()))


# ---------------------------------------------------------------- ciphertext


@dataclass(frozen=True)
class Ciphertext:
    scheme: str
    key_id: str
    payload: bytes

    def wire(self) -> str:
        return f"{self.scheme}:{self.key_id}:{self.payload.hex()}"

    @classmethod
    def from_wire(cls, text: str) -> "Ciphertext":
        scheme, kid, hx = text.split(":", 2)
        return cls(scheme, kid, bytes.fromhex(hx))

    def as_int(self) -> int:
        return int.from_bytes(self.payload, "big")

    def __len__(self) -> int:
        return len(self.payload)


def _shake(*parts: bytes, n: int) -> bytes:
    h = hashlib.shake_256()
    for p in parts:
        h.update(struct.pack(">I", len(p)))
        h.update(p)
    return h.digest(n)


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


# det: 4-round unbalanced Feistel permutation over the encoding

_ROUNDS = 4


def _feistel(material: bytes, data: bytes, inverse: bool) -> bytes:
    a = len(data) // 2
    left, right = data[:a], data[a:]
    rounds = range(_ROUNDS)
    if not inverse:
        for r in rounds:
            left, right = right, _xor(left, _shake(material, bytes([r]), right, n=len(left)))
        return left + right
    # after an even number of rounds the halves have their original lengths
    left, right = data[:a], data[a:]
    for r in reversed(rounds):
        # forward step was (L, R) -> (R, L ^ F(R)); undo it
        prev_right = left
        prev_left = _xor(right, _shake(material, bytes([r]), prev_right, n=len(right)))
        left, right = prev_left, prev_right
    return left + right


# ope: keyed recursive range splitting, int64 -> [0, 2^80)

_OPE_BITS = 80
_OPE_BYTES = _OPE_BITS // 8


@lru_cache(maxsize=1 << 20)
def _ope_split(material: bytes, lo: int, hi: int, rlo: int, rhi: int) -> int:
    n = hi - lo
    nl = n // 2
    nr = n - nl
    span = (rhi - rlo) - nl - nr + 1
    h = int.from_bytes(hashlib.blake2b(
        material + struct.pack(">QQ", lo, hi & (2**64 - 1)) + rlo.to_bytes(12, "big") + rhi.to_bytes(12, "big"),
        digest_size=16).digest(), "big")
    return rlo + nl + h % span


def _ope_leaf(material: bytes, lo: int, rlo: int, rhi: int) -> int:
    h = int.from_bytes(hashlib.blake2b(material + b"leaf" + struct.pack(">Q", lo), digest_size=16).digest(), "big")
    return rlo + h % (rhi - rlo)


def ope_encrypt_int(material: bytes, x: int) -> int:
    u = x + 2**63
    lo, hi, rlo, rhi = 0, 2**64, 0, 2**_OPE_BITS
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        s = _ope_split(material, lo, hi, rlo, rhi)
        if u < mid:
            hi, rhi = mid, s
        else:
            lo, rlo = mid, s
    return _ope_leaf(material, lo, rlo, rhi)


def ope_decrypt_int(material: bytes, c: int) -> int:
    lo, hi, rlo, rhi = 0, 2**64, 0, 2**_OPE_BITS
    if not 0 <= c < rhi:
        raise CryptoError("ope ciphertext out of range")
    while hi - lo > 1:
        mid = lo + (hi - lo) // 2
        s = _ope_split(material, lo, hi, rlo, rhi)
        if c < s:
            hi, rhi = mid, s
        else:
            lo, rlo = mid, s
    if _ope_leaf(material, lo, rlo, rhi) != c:
        raise CryptoError("invalid ope ciphertext")
    return lo - 2**63


# ah: Paillier with g = n + 1


def _paillier_enc(key: Key, m: int, rng: random.Random) -> int:
    n = key.n
    n2 = n * n
    while True:
        r = rng.randrange(1, n)
        if gcd(r, n) == 1:
            break
    return (1 + (m % n) * n) * pow(r, n, n2) % n2


def _paillier_dec(key: Key, c: int) -> int:
    n = key.n
    lam, mu = key.private
    m = (pow(c, lam, n * n) - 1) // n * mu % n
    # signed representative
    return m - n if m > n // 2 else m


def _ah_width(key: Key) -> int:
    return ((key.n * key.n).bit_length() + 7) // 8


_DEFAULT_RNG = random.Random()


def encrypt(key: Key, v: Value, rng: Optional[random.Random] = None) -> Ciphertext:
    rng = rng or _DEFAULT_RNG
    if key.scheme in ("ope", "ah"):
        if isinstance(v, bool) or not isinstance(v, int):
            raise CryptoError(f"{key.scheme} encrypts integers only")
        encode_value(v)  # range check
    if key.scheme == "det":
        payload = _feistel(key.material, encode_value(v), inverse=False)
    elif key.scheme == "rnd":
        data = encode_value(v)
        nonce = rng.randbytes(16)
        payload = nonce + _xor(data, _shake(key.material, nonce, n=len(data)))
    elif key.scheme == "ope":
        payload = ope_encrypt_int(key.material, v).to_bytes(_OPE_BYTES, "big")
    elif key.scheme == "ah":
        payload = _paillier_enc(key, v, rng).to_bytes(_ah_width(key), "big")
    else:
        raise CryptoError(f"unknown scheme {key.scheme}")
    return Ciphertext(key.scheme, key.key_id, payload)


def decrypt(key: Key, c: Ciphertext) -> Value:
    if not isinstance(c, Ciphertext):
        raise CryptoError(f"not a ciphertext: {c!r}")
    if c.scheme != key.scheme or c.key_id != key.key_id:
        raise CryptoError(f"ciphertext {c.scheme}:{c.key_id} does not match key {key.scheme}:{key.key_id}")
    if key.scheme == "det":
        return decode_value(_feistel(key.material, c.payload, inverse=True))
    if key.scheme == "rnd":
        nonce, body = c.payload[:16], c.payload[16:]
        return decode_value(_xor(body, _shake(key.material, nonce, n=len(body))))
    if key.scheme == "ope":
        return ope_decrypt_int(key.material, c.as_int())
    return _paillier_dec(key, c.as_int())


def ah_add(key: Key, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    """Homomorphic addition; needs only the public modulus of ``key``."""
    for c in (c1, c2):
        if not isinstance(c, Ciphertext) or c.scheme != "ah" or c.key_id != key.key_id:
            raise CryptoError("ah_add needs two ah ciphertexts under the same key")
    n2 = key.n * key.n
    return Ciphertext("ah", key.key_id, (c1.as_int() * c2.as_int() % n2).to_bytes(_ah_width(key), "big"))


def ope_less(c1: Ciphertext, c2: Ciphertext) -> bool:
    if c1.scheme != "ope" or c2.scheme != "ope" or c1.key_id != c2.key_id:
        raise CryptoError("ope comparison needs two ope ciphertexts under the same key")
    return c1.as_int() < c2.as_int()
