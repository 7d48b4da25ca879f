"""Bloom filter over locating-form URIs.

Serialized layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"PIDBLOOM"
    8       2     version (uint16, currently 1)
    10      8     m, bit count (uint64)
    18      4     k, hash count (uint32)
    22      8     hash seed (uint64)
    30      8     n_inserted (uint64)
    38      8     target false-positive rate (float64)
    46      ...   ceil(m / 8) bytes; bit i is (byte[i >> 3] >> (i & 7)) & 1

Bit positions use double hashing: BLAKE2b-128 keyed with the seed gives two
64-bit words h1, h2 and the i-th position is (h1 + i * h2) mod m.
"""
from __future__ import annotations

import gzip
import hashlib
import math
import struct
import warnings
from pathlib import Path
from typing import Iterable

import numpy as np

from .uri import NormalizedUri

MAGIC = b"PIDBLOOM"
VERSION = 1
_HEADER = struct.Struct("<8sHQIQQd")
DEFAULT_FPR = 1e-4
DEFAULT_CAPACITY = 10_000_000


class OverCapacity(UserWarning):
    pass


def optimal_bits(n: int, p: float) -> int:
    return math.ceil(-n * math.log(p) / math.log(2) ** 2)


def optimal_hashes(m: int, n: int) -> int:
    return max(1, round(m / n * math.log(2)))


class BloomFilter:
    def __init__(self, m: int, k: int, seed: int = 0, target_fpr: float = DEFAULT_FPR,
                 provisioned_n: int | None = None, bits: bytes | None = None, n_inserted: int = 0):
        if m <= 0 or k <= 0:
            raise ValueError("m and k must be positive")
        self.m = m
        self.k = k
        self.seed = seed
        self.target_fpr = target_fpr
        self.provisioned_n = provisioned_n
        self.n_inserted = n_inserted
        nbytes = (m + 7) // 8
        if bits is None:
            self.bits = np.zeros(nbytes, dtype=np.uint8)
        else:
            if len(bits) != nbytes:
                raise ValueError("bit array length does not match m")
            self.bits = np.frombuffer(bits, dtype=np.uint8).copy()
        self._key = seed.to_bytes(8, "little")
        self._offsets = np.arange(k, dtype=np.uint64)

    @classmethod
    def for_capacity(cls, provisioned_n: int, target_fpr: float = DEFAULT_FPR, seed: int = 0) -> "BloomFilter":
        if provisioned_n <= 0:
            raise ValueError("provisioned_n must be positive")
        if not 0 < target_fpr < 1:
            raise ValueError("target_fpr must be in (0, 1)")
        m = optimal_bits(provisioned_n, target_fpr)
        return cls(m, optimal_hashes(m, provisioned_n), seed, target_fpr, provisioned_n)

    def _pair(self, key: str) -> tuple[int, int]:
        d = hashlib.blake2b(key.encode("utf-8"), digest_size=16, key=self._key).digest()
        return int.from_bytes(d[:8], "little"), int.from_bytes(d[8:], "little")

    def _positions(self, keys: list[str]) -> np.ndarray:
        """(len(keys), k) array of bit positions."""
        m = self.m
        pairs = np.array([self._pair(key) for key in keys], dtype=np.uint64).reshape(-1, 2)
        # reduce first so a + i*b stays below 2**64; same value as (h1 + i*h2) mod m
        a = pairs[:, 0] % np.uint64(m)
        b = pairs[:, 1] % np.uint64(m)
        return (a[:, None] + self._offsets[None, :] * b[:, None]) % np.uint64(m)

    def add(self, key: str) -> None:
        self.add_many([key])

    def add_many(self, keys: Iterable[str], batch: int = 200_000) -> None:
        buf: list[str] = []
        for key in keys:
            buf.append(key)
            if len(buf) >= batch:
                self._insert(buf)
                buf = []
        if buf:
            self._insert(buf)
        if self.provisioned_n is not None and self.n_inserted > self.provisioned_n:
            warnings.warn(
                f"{self.n_inserted} keys inserted into a filter provisioned for {self.provisioned_n}",
                OverCapacity,
                stacklevel=2,
            )

    def _insert(self, keys: list[str]) -> None:
        pos = self._positions(keys).ravel()
        np.bitwise_or.at(self.bits, (pos >> np.uint64(3)).astype(np.int64),
                         (np.uint8(1) << (pos & np.uint64(7)).astype(np.uint8)))
        self.n_inserted += len(keys)

    def contains_many(self, keys: list[str], batch: int = 200_000) -> np.ndarray:
        out = np.zeros(len(keys), dtype=bool)
        for start in range(0, len(keys), batch):
            pos = self._positions(keys[start:start + batch])
            bytes_ = self.bits[(pos >> np.uint64(3)).astype(np.int64)]
            hit = (bytes_ >> (pos & np.uint64(7)).astype(np.uint8)) & np.uint8(1)
            out[start:start + batch] = hit.all(axis=1)
        return out

    def __contains__(self, key: str) -> bool:
        return bool(self.contains_many([key])[0])

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, self.m, self.k, self.seed, self.n_inserted, self.target_fpr)
        return header + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        magic, version, m, k, seed, n_inserted, fpr = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError("not a Bloom filter file")
        if version != VERSION:
            raise ValueError(f"unsupported Bloom filter version {version}")
        return cls(m, k, seed, fpr, bits=data[_HEADER.size:], n_inserted=n_inserted)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "BloomFilter":
        return cls.from_bytes(Path(path).read_bytes())


def build(keys: Iterable[str], provisioned_n: int, target_fpr: float = DEFAULT_FPR, seed: int = 0) -> BloomFilter:
    bf = BloomFilter.for_capacity(provisioned_n, target_fpr, seed)
    bf.add_many(keys)
    return bf


def probe(bf: BloomFilter, uri: NormalizedUri) -> bool:
    return uri.locating_key() in bf


class LocatingFilter:
    """Bloom filter plus the optional exact key set used to clear false positives.

    Passed to the classifier as its locating-filter handle.
    """

    def __init__(self, bloom: BloomFilter, exact: set[str] | None = None):
        self.bloom = bloom
        self.exact = exact

    def probe(self, uri: NormalizedUri) -> bool:
        return probe(self.bloom, uri)

    def verify(self, key: str) -> bool:
        return self.exact is None or key in self.exact

    def save(self, path: str | Path) -> None:
        path = Path(path)
        self.bloom.save(path)
        if self.exact is not None:
            with gzip.open(keys_path(path), "wt", encoding="utf-8") as fh:
                for key in sorted(self.exact):
                    fh.write(key + "\n")

    @classmethod
    def load(cls, path: str | Path, with_exact: bool = True) -> "LocatingFilter":
        path = Path(path)
        exact = None
        kp = keys_path(path)
        if with_exact and kp.exists():
            with gzip.open(kp, "rt", encoding="utf-8") as fh:
                exact = {line.rstrip("\n") for line in fh if line.strip()}
        return cls(BloomFilter.load(path), exact)


def keys_path(filter_path: Path) -> Path:
    return filter_path.with_name(filter_path.name + ".keys.gz")
