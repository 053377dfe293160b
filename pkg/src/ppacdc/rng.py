"""splitmix64 generator.

Fixed so that graphs and initial states can be reproduced from a seed by any
implementation, independent of numpy's or Python's generator internals.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform real in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def below(self, bound: int) -> int:
        """Integer in [0, bound). Plain modulo reduction; the bias is ~bound/2**64."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound


def uniform_vector(seed: int, size: int, lo: float, hi: float) -> list[float]:
    rng = SplitMix64(seed)
    return [rng.uniform_range(lo, hi) for _ in range(size)]
