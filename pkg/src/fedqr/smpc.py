"""Additive secret sharing over a prime field.

Reals are mapped to field elements by fixed-point scaling with
``2**frac_bits``; negatives wrap to ``p - |x|``.  A secure sum runs the three
phases of the additive protocol: every party splits its secret into one
share per party, each party adds the shares it received, and the partial
sums are announced and added.  Field elements are plain Python ints.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence

import numpy as np

from .errors import OutOfRange, TooFewParties

MERSENNE_127 = (1 << 127) - 1
DEFAULT_FRAC_BITS = 40
# encoded magnitudes stay below 2**80, leaving 46 bits of headroom for sums
ENCODED_BITS = 80

_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89)


def is_probable_prime(n: int) -> bool:
    """Miller-Rabin with a fixed base set.

    Deterministic (no randomness); provably exact below 3.3e24 and a strong
    test above that.
    """
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def prime_below_power_of_two(bits: int) -> int:
    """Largest prime below ``2**bits``; gives the Mersenne prime for 127."""
    if bits < 8:
        raise ValueError("prime must have at least 8 bits")
    n = (1 << bits) - 1
    while not is_probable_prime(n):
        n -= 2
    return n


@dataclass(frozen=True)
class FieldParams:
    prime: int = MERSENNE_127
    frac_bits: int = DEFAULT_FRAC_BITS

    def __post_init__(self):
        if self.frac_bits < 0:
            raise ValueError("frac_bits must be non-negative")
        if not is_probable_prime(self.prime):
            raise ValueError(f"{self.prime} is not prime")
        if self.encoded_bound >= self.prime // 2:
            raise ValueError("field too small for the declared dynamic range")

    @classmethod
    def from_bits(cls, prime_bits: int = 127, frac_bits: int = DEFAULT_FRAC_BITS) -> "FieldParams":
        prime = MERSENNE_127 if prime_bits == 127 else prime_below_power_of_two(prime_bits)
        return cls(prime, frac_bits)

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @cached_property
    def encoded_bound(self) -> int:
        return 1 << min(ENCODED_BITS, self.prime.bit_length() - 2)

    @property
    def max_magnitude(self) -> float:
        return self.encoded_bound / self.scale


def encode(r: float, params: FieldParams) -> int:
    """Fixed-point encode a real into ``[0, p)``."""
    r = float(r)
    if not np.isfinite(r) or abs(r) >= params.max_magnitude:
        raise OutOfRange(f"{r!r} outside the encodable range +-{params.max_magnitude:g}")
    return round(r * params.scale) % params.prime


def decode(x: int, params: FieldParams) -> float:
    x %= params.prime
    if x > params.prime // 2:
        x -= params.prime
    return x / params.scale


@dataclass(frozen=True)
class ShareBundle:
    """Shares produced by `source`; ``shares[i]`` goes to party ``i``."""

    source: int
    shares: tuple

    def total(self, prime: int) -> tuple:
        return tuple(sum(col) % prime for col in zip(*self.shares))


def make_shares(secret, n_parties: int, rng: random.Random, *, prime: int = MERSENNE_127,
                source: int = 0) -> ShareBundle:
    """Split a field element (or a sequence of them) into `n_parties` shares.

    The first ``n_parties - 1`` shares are uniform over the field and the
    last one is chosen so that all shares sum to the secret mod `prime`.
    """
    if n_parties < 2:
        raise TooFewParties(f"need at least 2 parties, got {n_parties}")
    secrets = [int(secret)] if isinstance(secret, (int, np.integer)) else [int(x) for x in secret]
    shares = [[rng.randrange(prime) for _ in secrets] for _ in range(n_parties - 1)]
    last = [(x - sum(col)) % prime for x, col in zip(secrets, zip(*shares))] if shares else secrets
    shares.append(last)
    return ShareBundle(source, tuple(tuple(s) for s in shares))


@dataclass
class SecureSumRun:
    """Everything exchanged during one secure sum, phase by phase."""

    bundles: List[ShareBundle]
    partials: List[tuple]
    field_total: tuple
    result: np.ndarray


def run_secure_sum(per_client_secrets: Sequence, params: FieldParams, rng: random.Random) -> SecureSumRun:
    vectors = [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in per_client_secrets]
    if not vectors:
        raise ValueError("no secrets to sum")
    length = vectors[0].shape[0]
    if any(v.shape != (length,) for v in vectors):
        raise ValueError("all secrets must be vectors of the same length")
    n = len(vectors)
    p = params.prime
    encoded = [[encode(x, params) for x in v] for v in vectors]
    if n == 1:
        # a single party cannot share with anyone; its value is the sum
        bundles = [ShareBundle(0, (tuple(encoded[0]),))]
    else:
        bundles = [make_shares(e, n, rng, prime=p, source=s) for s, e in enumerate(encoded)]
    partials = [
        tuple(sum(col) % p for col in zip(*(b.shares[i] for b in bundles)))
        for i in range(len(bundles[0].shares))
    ]
    field_total = tuple(sum(col) % p for col in zip(*partials))
    result = np.array([decode(x, params) for x in field_total])
    return SecureSumRun(bundles, partials, field_total, result)


def secure_sum(per_client_secrets: Sequence, params: FieldParams, rng: random.Random) -> np.ndarray:
    """Element-wise sum of the clients' real vectors through additive sharing."""
    return run_secure_sum(per_client_secrets, params, rng).result
