"""SplitMix64: the portable PRNG behind every random draw in the simulator.

The generator is defined by Steele, Lea and Flood's SplitMix64 finalizer and
is reproduced exactly here so that any implementation in any language can
regenerate the same noise and link-loss sequences:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

(all arithmetic mod 2**64). Uniform doubles take the top 53 bits.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer applied to ``z + GOLDEN_GAMMA``."""
    z = (z + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(*parts: int) -> int:
    """Fold integers into one 64-bit key. Negative parts are taken mod 2**64."""
    h = 0
    for p in parts:
        h = mix64(h ^ (p & MASK64))
    return h


class SplitMix64:
    """Stateful stream; ``copy()`` forks an identical generator."""

    __slots__ = ("state",)

    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        """Standard normal via Box-Muller (consumes two draws, uses the cosine branch)."""
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def copy(self) -> SplitMix64:
        return SplitMix64(self.state)
