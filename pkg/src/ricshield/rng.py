"""Deterministic seed plumbing: SplitMix64 streams, Fisher-Yates shuffles, named sub-streams.

Every random choice in the pipeline (dataset sub-seeds, cipher keys, weight
init, batch order) flows from one master seed through these primitives, so any
artifact can be regenerated bit-for-bit from its logged seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15


class SplitMix64:
    """64-bit SplitMix64 generator.

    The output sequence is normative: permutations and sub-seeds derived from
    it must be reproducible by any conforming implementation, so no library
    RNG is used here.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Next value reduced modulo n. Modulo bias is acceptable: the contract
        here is determinism, not cryptographic uniformity."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next() % n


def fisher_yates(n: int, stream: SplitMix64) -> np.ndarray:
    """Permutation of range(n) by the descending Fisher-Yates shuffle.

    Starts from the identity; at step i = n-1 .. 1 swaps positions i and
    (stream value mod (i+1)). Consumes exactly n-1 stream values, zero for
    n <= 1.
    """
    perm = np.arange(n, dtype=np.int64)
    for i in range(n - 1, 0, -1):
        j = stream.next_below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def splitmix64_block(seed: int, count: int) -> np.ndarray:
    """First `count` outputs of SplitMix64(seed) as a uint64 array.

    The state advances by a fixed constant, so the whole stream is a pure
    elementwise function of the output index; this is bit-identical to
    calling SplitMix64.next() `count` times, just vectorized.
    """
    steps = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed) + steps * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def fisher_yates_from_draws(n: int, draws: list[int], offset: int) -> tuple[list[int], int]:
    """Descending Fisher-Yates consuming pre-drawn stream values.

    Returns (permutation, next offset). Semantics match fisher_yates exactly.
    """
    perm = list(range(n))
    k = offset
    for i in range(n - 1, 0, -1):
        j = draws[k] % (i + 1)
        k += 1
        perm[i], perm[j] = perm[j], perm[i]
    return perm, k


def _fnv1a64(name: str) -> int:
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def substream(master_seed: int, name: str) -> SplitMix64:
    """Independent named stream derived from the master seed.

    The name is folded in through FNV-1a so streams like "dataset" and
    "keys" never collide for the same master seed.
    """
    return SplitMix64(SplitMix64(master_seed ^ _fnv1a64(name)).next())


def numpy_generator(master_seed: int, name: str) -> np.random.Generator:
    """Seeded numpy Generator for bulk draws (noise, QPSK symbols, init)."""
    return np.random.Generator(np.random.PCG64(substream(master_seed, name).next()))
