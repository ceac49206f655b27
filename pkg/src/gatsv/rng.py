"""Deterministic, portable random number generation.

Everything stochastic in this package (synthetic corpora, trial sampling,
weight init, dropout masks, batch shuffling) draws from xoshiro256** with
splitmix64 seed expansion, so identical seeds give identical streams on
any platform.  Gaussians use the Box-Muller transform:

    z0 = sqrt(-2 ln u1) * cos(2 pi u2)
    z1 = sqrt(-2 ln u1) * sin(2 pi u2)

with u1 in (0, 1] and u2 in [0, 1), both built from the top 53 bits of a
64-bit draw.  Bulk uniform fills are delegated to the active kernel
backend; the C and Python fills implement the same integer algorithm and
produce bit-identical streams.
"""

import math

import numpy as np

from .backend import kernels

MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0 ** -53


def splitmix64(state):
    """Advance a splitmix64 state once.  Returns (new_state, output)."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def mix64(*words):
    """Fold integer words into one 64-bit value (for deriving sub-seeds)."""
    h = 0
    for w in words:
        _, h = splitmix64(h ^ (int(w) & MASK64))
    return h


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** seeded from one or more integer words.

    The four state words are the first four outputs of a splitmix64
    stream seeded with ``mix64(*words)``.
    """

    def __init__(self, *words):
        if not words:
            raise ValueError("at least one seed word is required")
        x = mix64(*words)
        s = []
        for _ in range(4):
            x, out = splitmix64(x)
            s.append(out)
        if not any(s):
            s[0] = 1
        self._s = s

    def next_u64(self):
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

    def random(self):
        """One double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniforms(self, n):
        """n doubles in [0, 1) as a float64 array (kernel-accelerated)."""
        out = np.empty(n, dtype=np.float64)
        state = np.array(self._s, dtype=np.uint64)
        kernels.fill_uniform(state, out)
        self._s = [int(v) for v in state]
        return out

    def normals(self, n):
        """n standard Gaussians via Box-Muller.

        Each call starts a fresh pair; the second half of a trailing pair
        is discarded, so the stream consumed depends only on n.
        """
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53
            u2 = (self.next_u64() >> 11) * _INV_2_53
            r = math.sqrt(-2.0 * math.log(u1))
            a = _TWO_PI * u2
            out[i] = r * math.cos(a)
            i += 1
            if i < n:
                out[i] = r * math.sin(a)
                i += 1
        return out

    def normal(self):
        return self.normals(1)[0]

    def randbelow(self, n):
        """Uniform integer in [0, n) by bit-mask rejection (unbiased)."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        bits = (n - 1).bit_length()
        while True:
            r = self.next_u64() >> (64 - bits)
            if r < n:
                return r

    def shuffle(self, seq):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def two_distinct(self, n):
        """Ordered pair of distinct integers from [0, n)."""
        if n < 2:
            raise ValueError("need n >= 2")
        i = self.randbelow(n)
        j = self.randbelow(n - 1)
        if j >= i:
            j += 1
        return i, j
