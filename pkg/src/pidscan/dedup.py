"""Duplicate estimates: URI-ratio duplication and HyperLogLog digest counts.

The sketch hashes keys with keyed BLAKE2b to 64 bits.  The top ``p`` bits
pick a register; the register keeps the maximum of (leading zeros of the
remaining ``64 - p`` bits) + 1.

Estimation uses Ertl's improved raw estimator ("New cardinality estimation
algorithms for HyperLogLog sketches", 2017).  With ``C[k]`` the number of
registers holding ``k`` and ``q = 64 - p``::

    z = m * tau(1 - C[q+1]/m)
    for k = q .. 1:  z = (z + C[k]) / 2
    z = z + m * sigma(C[0]/m)
    E = m^2 / (2 ln 2 * z)

``sigma`` folds linear counting into the harmonic mean for small
cardinalities and ``tau`` corrects for saturated registers, so no empirical
bias tables or range switches are needed.
"""
from __future__ import annotations

import base64
import hashlib
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

HASH_BITS = 64
MIN_PRECISION, MAX_PRECISION = 4, 18
DEFAULT_PRECISION = 14


class IncompatibleSketchParams(ValueError):
    pass


def _as_bytes(key: bytes | str) -> bytes:
    return key.encode("utf-8") if isinstance(key, str) else key


def _sigma(x: float) -> float:
    if x == 1.0:
        return math.inf
    y, z = 1.0, x
    while True:
        x *= x
        z_old = z
        z += x * y
        y += y
        if z == z_old:
            return z


def _tau(x: float) -> float:
    if x == 0.0 or x == 1.0:
        return 0.0
    y, z = 1.0, 1.0 - x
    while True:
        x = math.sqrt(x)
        z_old = z
        y *= 0.5
        z -= (1.0 - x) ** 2 * y
        if z == z_old:
            return z / 3.0


class HllSketch:
    def __init__(self, precision: int = DEFAULT_PRECISION, seed: int = 0, registers: bytes | None = None):
        if not MIN_PRECISION <= precision <= MAX_PRECISION:
            raise ValueError(f"precision must be in [{MIN_PRECISION}, {MAX_PRECISION}]")
        self.precision = precision
        self.seed = seed
        self.m = 1 << precision
        self._key = seed.to_bytes(8, "little", signed=False)
        if registers is None:
            self.registers = bytearray(self.m)
        else:
            if len(registers) != self.m:
                raise ValueError("register array has wrong length")
            self.registers = bytearray(registers)
        self._q = HASH_BITS - precision
        self._wmask = (1 << self._q) - 1

    def _hash(self, key: bytes) -> int:
        return int.from_bytes(hashlib.blake2b(key, digest_size=8, key=self._key).digest(), "little")

    def add(self, key: bytes | str) -> "HllSketch":
        h = self._hash(_as_bytes(key))
        idx = h >> self._q
        rank = self._q - (h & self._wmask).bit_length() + 1
        if rank > self.registers[idx]:
            self.registers[idx] = rank
        return self

    def add_many(self, keys: Iterable[bytes | str]) -> "HllSketch":
        hashes = np.fromiter(
            (self._hash(_as_bytes(k)) for k in keys), dtype=np.uint64
        )
        if hashes.size == 0:
            return self
        idx = (hashes >> np.uint64(self._q)).astype(np.int64)
        w = hashes & np.uint64(self._wmask)
        bitlen = _bit_length(w)
        rank = (self._q - bitlen + 1).astype(np.uint8)
        regs = np.frombuffer(self.registers, dtype=np.uint8).copy()
        np.maximum.at(regs, idx, rank)
        self.registers = bytearray(regs.tobytes())
        return self

    def _check(self, other: "HllSketch") -> None:
        if self.precision != other.precision or self.seed != other.seed:
            raise IncompatibleSketchParams(
                f"cannot merge p={self.precision}/seed={self.seed} with p={other.precision}/seed={other.seed}"
            )

    def update(self, other: "HllSketch") -> "HllSketch":
        self._check(other)
        merged = np.maximum(
            np.frombuffer(self.registers, dtype=np.uint8), np.frombuffer(other.registers, dtype=np.uint8)
        )
        self.registers = bytearray(merged.tobytes())
        return self

    def merge(self, other: "HllSketch") -> "HllSketch":
        return self.copy().update(other)

    def copy(self) -> "HllSketch":
        return HllSketch(self.precision, self.seed, bytes(self.registers))

    def estimate(self) -> float:
        m, q = self.m, self._q
        counts = np.bincount(np.frombuffer(self.registers, dtype=np.uint8), minlength=q + 2)
        z = m * _tau(1.0 - counts[q + 1] / m)
        for k in range(q, 0, -1):
            z = 0.5 * (z + counts[k])
        z += m * _sigma(counts[0] / m)
        if math.isinf(z):
            return 0.0
        return m * m / (2.0 * math.log(2.0) * z)

    def __len__(self) -> int:
        return round(self.estimate())

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, HllSketch)
            and self.precision == other.precision
            and self.seed == other.seed
            and self.registers == other.registers
        )

    def __repr__(self) -> str:
        return f"HllSketch(p={self.precision}, seed={self.seed}, estimate={self.estimate():.1f})"

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "seed": self.seed,
            "registers": base64.b64encode(bytes(self.registers)).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HllSketch":
        return cls(d["precision"], d["seed"], base64.b64decode(d["registers"]))


def _bit_length(w: np.ndarray) -> np.ndarray:
    hi = (w >> np.uint64(32)).astype(np.float64)
    lo = (w & np.uint64(0xFFFFFFFF)).astype(np.float64)
    # frexp exponent == bit length for positive integers below 2**53
    hi_len = np.frexp(hi)[1].astype(np.int64)
    lo_len = np.frexp(lo)[1].astype(np.int64)
    return np.where(hi_len > 0, hi_len + 32, lo_len)


@dataclass(frozen=True)
class CrawlStats:
    uris_crawled: int
    pages_retrieved: int
    distinct_digests: int
    dup_uri_pct: float
    dup_pages_pct: float

    def display(self) -> dict[str, str]:
        from .report import fmt_pct

        return {"dup_uri_pct": fmt_pct(self.dup_uri_pct, 1), "dup_pages_pct": fmt_pct(self.dup_pages_pct, 1)}


def compute_crawl_stats(uris_crawled: int, pages_retrieved: int, distinct_digests: int) -> CrawlStats:
    """Both duplicate fractions; values are fractions in [0, 1], format for display."""
    if pages_retrieved <= 0:
        raise ValueError("pages_retrieved must be positive")
    return CrawlStats(
        uris_crawled,
        pages_retrieved,
        distinct_digests,
        max(0.0, 1.0 - uris_crawled / pages_retrieved),
        max(0.0, 1.0 - distinct_digests / pages_retrieved),
    )
