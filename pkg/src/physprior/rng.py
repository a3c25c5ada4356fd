"""Portable pseudo-random generators: splitmix64 and xoshiro256++.

Everything that must be reproducible across implementations (world sampling,
dataset seeds, input corruption) draws from these. Arithmetic is explicit
64-bit modular so results do not depend on any library's RNG.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x):
    """Return the first splitmix64 output for state ``x``."""
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *tags):
    """Domain-separated child seed: mixes each tag (int or str) into ``seed``."""
    s = splitmix64(seed & MASK64)
    for tag in tags:
        if isinstance(tag, str):
            v = int.from_bytes(tag.encode("utf-8")[:8].ljust(8, b"\0"), "little")
            v ^= len(tag) << 56
        else:
            v = int(tag)
        s = splitmix64(s ^ (v & MASK64))
    return s


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK64

    def next(self):
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256pp:
    """xoshiro256++ seeded from four splitmix64 outputs."""

    def __init__(self, seed):
        sm = SplitMix64(seed)
        self.s = [sm.next() for _ in range(4)]

    def next_u64(self):
        s = self.s
        result = (_rotl((s[0] + s[3]) & MASK64, 23) + s[0]) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self):
        """Uniform double in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo, hi):
        return lo + (hi - lo) * self.random()

    def integers(self, lo, hi):
        """Uniform integer in the closed range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty integer range [{lo}, {hi}]")
        span = hi - lo + 1
        # rejection sampling removes modulo bias
        limit = (1 << 64) - ((1 << 64) % span)
        while True:
            r = self.next_u64()
            if r < limit:
                return lo + r % span

    def choice(self, seq):
        return seq[self.integers(0, len(seq) - 1)]

    def normal(self):
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class LaneXoshiro:
    """Vectorised xoshiro256++ running ``lanes`` independent streams.

    Lane ``i`` is seeded with ``splitmix64(seed ^ i)``; bulk draws interleave
    lanes so the output is fixed by (seed, lanes) alone.
    """

    def __init__(self, seed, lanes=1024):
        self.lanes = lanes
        state = np.empty((4, lanes), dtype=np.uint64)
        for i in range(lanes):
            sm = SplitMix64(splitmix64((seed ^ i) & MASK64))
            for j in range(4):
                state[j, i] = sm.next()
        self.s = state

    @staticmethod
    def _rotl(x, k):
        return (x << np.uint64(k)) | (x >> np.uint64(64 - k))

    def next_u64(self):
        s = self.s
        result = self._rotl(s[0] + s[3], 23) + s[0]
        t = s[1] << np.uint64(17)
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def random(self, n):
        rounds = -(-n // self.lanes)
        out = np.empty((rounds, self.lanes), dtype=np.float64)
        for r in range(rounds):
            out[r] = (self.next_u64() >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return out.reshape(-1)[:n]

    def standard_normal(self, n):
        """Box-Muller pairs: cosine half then sine half of each round."""
        half = -(-n // 2)
        u1 = 1.0 - self.random(half)
        u2 = self.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


def numpy_rng(seed, *tags):
    """numpy Generator for non-portable uses (weight init, sampling, shuffles)."""
    return np.random.default_rng(derive_seed(seed, *tags))
