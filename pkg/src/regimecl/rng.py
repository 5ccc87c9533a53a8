"""Pinned integer-only random number generation.

Every random draw in the package goes through :class:`XorShift64Star` so that
task orders, splits and initializations reproduce bit-for-bit on any platform.

Generator: xorshift64* with shifts (12, 25, 27) and output multiplier
``0x2545F4914F6CDD1D``. States are seeded through one round of splitmix64
(increment ``0x9E3779B97F4A7C15``, multipliers ``0xBF58476D1CE4E5B9`` and
``0x94D049BB133111EB``). Sub-seeds come from :func:`hash64`, which is FNV-1a
64 over the UTF-8 text of its arguments followed by the splitmix64 finalizer.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
_XS_MULT = 0x2545F4914F6CDD1D
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(*parts: object) -> int:
    """Stable 64-bit hash of ``parts``, joined with ``|`` as text."""
    h = _FNV_OFFSET
    for byte in "|".join(str(p) for p in parts).encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return splitmix64(h)


class XorShift64Star:
    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        # xorshift has a single absorbing state at zero
        self._state = state if state != 0 else 0x9E3779B97F4A7C15
        self._spare: float | None = None

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self._state = x
        return (x * _XS_MULT) & MASK64

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self) -> float:
        """Standard normal draw (Box-Muller, second variate cached)."""
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        self._spare = radius * math.sin(2.0 * math.pi * u2)
        return radius * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, n: int, low: float = 0.0, high: float = 1.0) -> list[float]:
        span = high - low
        return [low + span * self.uniform() for _ in range(n)]

    def normal_array(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of ``range(n)``."""
        items = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
