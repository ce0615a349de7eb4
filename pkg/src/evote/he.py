"""Additively homomorphic public-key encryption over big integers.

Paillier construction with the fixed generator g = n + 1, so that
g^m = 1 + m*n (mod n^2) and encryption costs a single modular
exponentiation.  The product of two ciphertexts decrypts to the sum of
their plaintexts, which is the only homomorphic property the rest of
the package relies on; callers interact exclusively through
``generate_keypair`` / ``encrypt`` / ``decrypt`` / ``add_ciphertexts``
so another additive scheme could be slotted in behind the same
functions.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import secrets
import threading
from dataclasses import dataclass
from functools import cached_property
from random import Random
from typing import Optional

try:
    from gmpy2 import powmod as _powmod  # an order of magnitude faster at 2048 bits
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _powmod = pow


def _pow(base: int, exp: int, mod: int) -> int:
    return int(_powmod(base, exp, mod))


SUPPORTED_BITS = (512, 1024, 2048, 3072)
DEFAULT_BITS = 2048

# 40 Miller-Rabin rounds: composite survival probability < 4^-40 = 2^-80.
MILLER_RABIN_ROUNDS = 40

PUBLIC_KEY_FILENAME = "public.json"
SECRET_KEY_FILENAME = "secret.json"


class KeyMismatchError(ValueError):
    """Raised when a ciphertext's key fingerprint does not match the key in use."""


# ---------------------------------------------------------------------------
# operation counters
#
# Every encrypt/decrypt/add bumps a shared counter.  Tests and the analysis
# pipeline use the deltas to prove that the tally path performs no
# homomorphic additions and that analysis decrypts only final aggregates.

_counter_lock = threading.Lock()
_op_counts = {"encrypt": 0, "decrypt": 0, "add": 0}


def _count(op: str) -> None:
    with _counter_lock:
        _op_counts[op] += 1


def operation_counts() -> dict:
    """Snapshot of cumulative encrypt/decrypt/add call counts."""
    with _counter_lock:
        return dict(_op_counts)


def reset_operation_counts() -> None:
    with _counter_lock:
        for op in _op_counts:
            _op_counts[op] = 0


# ---------------------------------------------------------------------------
# primality

def _small_primes(limit: int = 1000) -> tuple:
    sieve = bytearray([1]) * limit
    sieve[0:2] = b"\x00\x00"
    for i in range(2, int(limit ** 0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = bytearray(len(sieve[i * i :: i]))
    return tuple(i for i in range(limit) if sieve[i])


_SMALL_PRIMES = _small_primes()


def is_probable_prime(n: int, rounds: int = MILLER_RABIN_ROUNDS, rand: Optional[Random] = None) -> bool:
    """Miller-Rabin test with error probability below 4^-rounds."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    pick = rand.randrange if rand is not None else secrets.SystemRandom().randrange
    for _ in range(rounds):
        a = pick(2, n - 1)
        x = _pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = _pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rand: Random) -> int:
    # Top two bits set so the product of two such primes has exactly 2*bits bits.
    while True:
        candidate = rand.getrandbits(bits) | (3 << (bits - 2)) | 1
        if is_probable_prime(candidate, rand=rand):
            return candidate


# ---------------------------------------------------------------------------
# key material

def key_fingerprint(n: int) -> bytes:
    """32-byte digest identifying a public key: SHA-256 over the length-prefixed
    big-endian bytes of n.  Mirrored by the browser client."""
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return hashlib.sha256(len(raw).to_bytes(4, "big") + raw).digest()


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int

    def __post_init__(self):
        if self.g != self.n + 1:
            raise ValueError("generator must equal n + 1")

    @cached_property
    def n_squared(self) -> int:
        return self.n * self.n

    @cached_property
    def fingerprint(self) -> bytes:
        return key_fingerprint(self.n)

    @property
    def security_bits(self) -> int:
        return self.n.bit_length()


@dataclass(frozen=True)
class Keypair:
    p: int
    q: int
    n: int
    g: int
    lam: int
    mu: int
    security_bits: int

    @cached_property
    def public(self) -> PublicKey:
        return PublicKey(self.n, self.g)

    @property
    def fingerprint(self) -> bytes:
        return self.public.fingerprint

    @classmethod
    def from_primes(cls, p: int, q: int, check_primality: bool = True) -> "Keypair":
        if p == q:
            raise ValueError("p and q must be distinct")
        if check_primality and not (is_probable_prime(p) and is_probable_prime(q)):
            raise ValueError("p and q must both be prime")
        n = p * q
        g = n + 1
        lam = math.lcm(p - 1, q - 1)
        u = _pow(g, lam, n * n)
        mu = pow((u - 1) // n, -1, n)
        return cls(p=p, q=q, n=n, g=g, lam=lam, mu=mu, security_bits=n.bit_length())


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_fingerprint: bytes

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("ciphertext value must be non-negative")
        if len(self.key_fingerprint) != 32:
            raise ValueError("key fingerprint must be 32 bytes")


def generate_keypair(security_bits: int = DEFAULT_BITS, seed: Optional[int] = None) -> Keypair:
    """Generate a fresh keypair with an n of exactly ``security_bits`` bits.

    ``seed`` switches to a deterministic generator and exists for tests only;
    production keys must be generated without it.
    """
    if security_bits not in SUPPORTED_BITS:
        raise ValueError(
            f"unsupported bit size {security_bits}; supported: {SUPPORTED_BITS}"
        )
    rand = Random(seed) if seed is not None else secrets.SystemRandom()
    half = security_bits // 2
    p = _random_prime(half, rand)
    q = _random_prime(half, rand)
    while q == p:
        q = _random_prime(half, rand)
    kp = Keypair.from_primes(p, q, check_primality=False)
    assert kp.n.bit_length() == security_bits
    return kp


# ---------------------------------------------------------------------------
# core operations

def encrypt(key: PublicKey, plaintext: int, randomness: Optional[int] = None) -> Ciphertext:
    """Encrypt ``plaintext`` under ``key``: c = (1 + m*n) * r^n mod n^2.

    Fresh randomness is drawn from the system CSPRNG unless ``randomness``
    is supplied explicitly (tests and protocol replays).
    """
    n = key.n
    if not 0 <= plaintext < n:
        raise ValueError("plaintext out of range [0, n)")
    if randomness is None:
        while True:
            r = secrets.randbelow(n - 1) + 1
            if math.gcd(r, n) == 1:
                break
    else:
        r = randomness
        if not 1 <= r < n:
            raise ValueError("randomness out of range [1, n)")
        if math.gcd(r, n) != 1:
            raise ValueError("randomness not coprime to n")
    n2 = key.n_squared
    value = (1 + plaintext * n) % n2 * _pow(r, n, n2) % n2
    _count("encrypt")
    return Ciphertext(value=value, key_fingerprint=key.fingerprint)


def decrypt(key: Keypair, ct: Ciphertext) -> int:
    """Invert ``encrypt``: m = L(c^lambda mod n^2) * mu mod n, L(x) = (x-1)/n."""
    if ct.key_fingerprint != key.fingerprint:
        raise KeyMismatchError("ciphertext was made under a different key")
    n = key.n
    n2 = n * n
    if not 0 <= ct.value < n2:
        raise ValueError("ciphertext value out of range [0, n^2)")
    if math.gcd(ct.value, n2) != 1:
        raise ValueError("ciphertext value not coprime to n^2")
    u = _pow(ct.value, key.lam, n2)
    _count("decrypt")
    return (u - 1) // n * key.mu % n


def add_ciphertexts(key: PublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the result decrypts to (Dec(a) + Dec(b)) mod n."""
    fp = key.fingerprint
    if a.key_fingerprint != fp or b.key_fingerprint != fp:
        raise KeyMismatchError("ciphertexts belong to a different key")
    _count("add")
    return Ciphertext(value=a.value * b.value % key.n_squared, key_fingerprint=fp)


def validate_ciphertext(key: PublicKey, ct: Ciphertext) -> None:
    """Reject ciphertexts that cannot have been produced under ``key``."""
    if ct.key_fingerprint != key.fingerprint:
        raise KeyMismatchError("ciphertext fingerprint does not match election key")
    if not 0 <= ct.value < key.n_squared:
        raise ValueError("ciphertext value out of range [0, n^2)")
    if math.gcd(ct.value, key.n_squared) != 1:
        raise ValueError("ciphertext value not coprime to n^2")


# ---------------------------------------------------------------------------
# wire and file forms

def ciphertext_to_wire(ct: Ciphertext) -> dict:
    """Hex wire form shared with the browser client."""
    return {"value": format(ct.value, "x"), "fingerprint": ct.key_fingerprint.hex()}


def ciphertext_from_wire(obj: dict) -> Ciphertext:
    try:
        value = int(obj["value"], 16)
        fingerprint = bytes.fromhex(obj["fingerprint"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed ciphertext wire form: {exc}") from exc
    return Ciphertext(value=value, key_fingerprint=fingerprint)


def _hex(x: int) -> str:
    return format(x, "x")


def save_keypair(key: Keypair, out_dir) -> tuple:
    """Write public.json and secret.json under ``out_dir``.

    Hex renderings are lowercase big-endian with no leading zeros.  The
    secret file is created with owner-only permissions.
    """
    os.makedirs(out_dir, exist_ok=True)
    public_path = os.path.join(out_dir, PUBLIC_KEY_FILENAME)
    secret_path = os.path.join(out_dir, SECRET_KEY_FILENAME)
    with open(public_path, "w", encoding="utf-8") as fh:
        json.dump({"n": _hex(key.n), "security_bits": key.security_bits}, fh, indent=2)
        fh.write("\n")
    fd = os.open(secret_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(
            {"p": _hex(key.p), "q": _hex(key.q), "security_bits": key.security_bits},
            fh,
            indent=2,
        )
        fh.write("\n")
    return public_path, secret_path


def load_public_key(path) -> PublicKey:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    n = int(doc["n"], 16)
    bits = int(doc["security_bits"])
    if n.bit_length() != bits:
        raise ValueError("public key file corrupt: n does not have the declared bit length")
    return PublicKey(n, n + 1)


def load_keypair(path) -> Keypair:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    p = int(doc["p"], 16)
    q = int(doc["q"], 16)
    key = Keypair.from_primes(p, q)
    if key.security_bits != int(doc["security_bits"]):
        raise ValueError("secret key file corrupt: declared bit length does not match n")
    return key
