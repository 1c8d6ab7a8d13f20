"""Counted source of random bits.

Every random decision in the package (tree embedding, member sampling) draws
from a :class:`BitStream` so that a run can report exactly how many bits it
consumed.
"""

import random


class BitStream:
    """Seeded bit source with a consumption counter.

    Parameters
    ----------
    seed : int
        Seed of the underlying generator. Two streams with the same seed
        produce the same bits.
    """

    def __init__(self, seed=0):
        self.seed = seed
        self._rng = random.Random(seed)
        self.used = 0

    def bits(self, b):
        """Return a uniform integer in ``[0, 2**b)`` and charge ``b`` bits."""
        if b < 0:
            raise ValueError("negative bit count")
        if b == 0:
            return 0
        self.used += b
        return self._rng.getrandbits(b)

    def below(self, n):
        """Uniform integer in ``[0, n)`` by rejection on ``ceil(log2 n)`` bits."""
        if n <= 0:
            raise ValueError("empty range")
        b = (n - 1).bit_length()
        while True:
            v = self.bits(b)
            if v < n:
                return v

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        p = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            p[i], p[j] = p[j], p[i]
        return p

    def __repr__(self):
        return f"BitStream(seed={self.seed}, used={self.used})"
