"""Bloom filters over integer item ids, one per cluster, for compact membership."""

from __future__ import annotations

import hashlib
import math
import struct

import numpy as np


_MASK64 = (1 << 64) - 1


def _hash_pair(item: int) -> tuple[int, int]:
    digest = hashlib.blake2b(struct.pack("<q", int(item)), digest_size=16).digest()
    h1, h2 = struct.unpack("<QQ", digest)
    return h1, h2 | 1


def hash_pairs(n_items: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.array([_hash_pair(i) for i in range(n_items)], dtype=np.uint64).reshape(-1, 2)
    return pairs[:, 0].copy(), pairs[:, 1].copy()


def optimal_bits(n: int, fp_rate: float) -> int:
    return max(8, math.ceil(-n * math.log(fp_rate) / math.log(2) ** 2))


def bits_per_item(fp_rate: float) -> float:
    return -math.log(fp_rate) / math.log(2) ** 2


class BloomFilter:
    HEADER = struct.Struct("<QI")

    def __init__(self, n_bits: int, n_hashes: int, bits: np.ndarray | None = None):
        self.n_bits = int(n_bits)
        self.n_hashes = int(n_hashes)
        nbytes = (self.n_bits + 7) // 8
        self.bits = np.zeros(nbytes, dtype=np.uint8) if bits is None else np.asarray(bits, dtype=np.uint8)
        if len(self.bits) != nbytes:
            raise ValueError("bit array length does not match n_bits")

    @classmethod
    def for_items(cls, items, fp_rate: float = 0.01) -> "BloomFilter":
        items = list(items)
        n = max(1, len(items))
        m = optimal_bits(n, fp_rate)
        bf = cls(m, max(1, round(m / n * math.log(2))))
        for item in items:
            bf.add(item)
        return bf

    def _positions(self, item: int):
        h1, h2 = _hash_pair(item)
        return [((h1 + j * h2) & _MASK64) % self.n_bits for j in range(self.n_hashes)]

    def contains_many(self, h1: np.ndarray, h2: np.ndarray) -> np.ndarray:
        """Vectorized membership for items given their precomputed hash pairs."""
        hit = np.ones(len(h1), dtype=bool)
        m = np.uint64(self.n_bits)
        for j in range(self.n_hashes):
            pos = (h1 + np.uint64(j) * h2) % m
            hit &= (self.bits[pos >> np.uint64(3)] >> (pos & np.uint64(7)).astype(np.uint8)) & 1 == 1
        return hit

    def add(self, item: int) -> None:
        for pos in self._positions(item):
            self.bits[pos >> 3] |= np.uint8(1 << (pos & 7))

    def __contains__(self, item: int) -> bool:
        return all(self.bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(item))

    @property
    def nbytes(self) -> int:
        return len(self.bits)

    def to_bytes(self) -> bytes:
        return self.HEADER.pack(self.n_bits, self.n_hashes) + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "BloomFilter":
        n_bits, n_hashes = cls.HEADER.unpack_from(data)
        bits = np.frombuffer(data, dtype=np.uint8, offset=cls.HEADER.size).copy()
        return cls(n_bits, n_hashes, bits)


def encode_membership(membership: np.ndarray, K: int, fp_rate: float = 0.01) -> list[BloomFilter]:
    return [BloomFilter.for_items(np.flatnonzero(membership == c).tolist(), fp_rate) for c in range(K)]


def decode_membership(filters: list[BloomFilter], n_items: int):
    """Lowest-id matching cluster per item, plus the number of items with several matches."""
    h1, h2 = hash_pairs(n_items)
    out = np.full(n_items, -1, dtype=np.int64)
    n_hits = np.zeros(n_items, dtype=np.int64)
    for c, bf in enumerate(filters):
        hit = bf.contains_many(h1, h2)
        out[hit & (out < 0)] = c
        n_hits += hit
    return out, int(np.sum(n_hits > 1))
