"""Deterministic random number generation.

The generator is xoshiro256** (Blackman & Vigna), seeded through splitmix64.
It was chosen over numpy's Generator because the whole training protocol has
to replay bit-identically from a recorded seed on any platform, and because
checkpoints need to carry an explicit (state, draw count) pair.

One master seed spawns named substreams ("init", "shuffle", ...) by mixing a
hash of the stream name into the seed. Substreams are independent: drawing
from one never advances another, so inserting a layer (extra init draws)
cannot perturb the data-shuffle order.
"""

from __future__ import annotations

import numpy as np

from .errors import GrowPruneError

_MASK64 = (1 << 64) - 1

ALGORITHM = "xoshiro256**"


def _splitmix64(x: int):
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class SeededRng:
    """xoshiro256** stream with an explicit draw counter.

    `seed` is any 64-bit integer; identical seeds give identical draw
    sequences on every platform (all arithmetic is exact 64-bit integer
    arithmetic on Python ints).
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.draws = 0
        s = self.seed
        state = []
        for _ in range(4):
            s, out = _splitmix64(s)
            state.append(out)
        self._s = state

    # -- core stream ---------------------------------------------------

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        self.draws += 1
        return result

    def random(self) -> float:
        # 53 high bits -> uniform double in [0, 1)
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise GrowPruneError(f"randbelow needs n > 0, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    # -- bulk draws ----------------------------------------------------

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        """float32 array filled in flat row-major draw order."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        span = high - low
        for i in range(n):
            out[i] = low + span * self.random()
        return out.reshape(shape).astype(np.float32)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    # -- substreams & state --------------------------------------------

    def spawn(self, name: str) -> "SeededRng":
        """Independent substream keyed by (this stream's seed, name)."""
        return SeededRng(self.seed ^ _fnv1a64(name.encode("utf-8")))

    def state(self) -> dict:
        return {
            "algorithm": ALGORITHM,
            "seed": self.seed,
            "state": list(self._s),
            "draws": self.draws,
        }

    @classmethod
    def from_state(cls, state: dict) -> "SeededRng":
        if state.get("algorithm") != ALGORITHM:
            raise GrowPruneError(
                f"unknown rng algorithm {state.get('algorithm')!r}")
        rng = cls(state["seed"])
        rng._s = [int(v) & _MASK64 for v in state["state"]]
        rng.draws = int(state["draws"])
        return rng
