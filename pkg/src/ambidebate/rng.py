"""Portable seeded randomness.

Every draw goes through numpy's PCG64 bit generator, whose raw output
stream is fixed across platforms and numpy releases. Only ``random_raw``
is used; index selection and float conversion are done here so that no
distribution-level implementation detail can shift a dataset.
"""

from __future__ import annotations

import hashlib
from typing import Sequence, TypeVar

import numpy as np

T = TypeVar("T")

MASK64 = (1 << 64) - 1


def _key_words(parts: Sequence[object]) -> list[int]:
    digest = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=16).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]


class PortableRng:
    """Deterministic random source seeded by a 64-bit value plus optional stream keys."""

    def __init__(self, seed: int, *stream: object):
        seed &= MASK64
        entropy = [seed & 0xFFFFFFFF, seed >> 32]
        if stream:
            entropy += _key_words(stream)
        self._bits = np.random.PCG64(np.random.SeedSequence(entropy))

    def next_u64(self) -> int:
        return int(self._bits.random_raw())

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, items: Sequence[T]) -> T:
        if not items:
            raise ValueError("cannot choose from an empty sequence")
        return items[self.below(len(items))]

    def uniform(self) -> float:
        """Float in ``[0, 1)`` with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def bernoulli(self, p: float) -> bool:
        return self.uniform() < p
