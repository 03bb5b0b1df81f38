"""Seeded 64-bit PRNG used everywhere determinism matters.

The generator is xoshiro256** with its 256-bit state filled from four
successive splitmix64 outputs of the user seed.  Both algorithms are the
public-domain reference versions by Blackman and Vigna, so a stream can be
reproduced by any other implementation from the seed alone.

Derived quantities:

* ``random()``      -- ``(next_u64() >> 11) * 2**-53``, a double in [0, 1)
* ``uniform(a, b)`` -- ``a + (b - a) * random()``
* ``randbelow(n)``  -- rejection sampling on the smallest covering bit mask
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** seeded through splitmix64."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        while True:
            # draw as many 64-bit words as needed for wide (field-sized) ranges
            x = 0
            for _ in range((bits + 63) // 64):
                x = (x << 64) | self.next_u64()
            x &= (1 << bits) - 1
            if x < n:
                return x

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in the closed range [lo, hi]."""
        return lo + self.randbelow(hi - lo + 1)

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            out += self.next_u64().to_bytes(8, "little")
        return bytes(out[:n])

    def uniform_array(self, shape, a: float, b: float) -> np.ndarray:
        """Array of ``uniform(a, b)`` draws filled in C (row-major) order."""
        size = int(np.prod(shape, dtype=np.int64))
        vals = [a + (b - a) * self.random() for _ in range(size)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def spawn(self) -> "Xoshiro256":
        """Independent child generator seeded from this stream."""
        return Xoshiro256(self.next_u64())
