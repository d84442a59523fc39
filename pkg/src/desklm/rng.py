"""Deterministic, platform-stable random number generation.

Every random draw in this package flows through :class:`Rng`, a xoshiro256**
generator whose state is seeded via splitmix64.  Both algorithms are pure
64-bit integer arithmetic, so identical seeds produce identical streams on
every platform and Python build — which is what makes training runs, fixture
generation, and evaluation reports bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def mix64(x: int) -> int:
    """One-shot splitmix64 finalizer: a strong 64-bit avalanche mix."""
    return splitmix64(x & _MASK)[1]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** with splitmix64 seeding.

    ``derive(*tags)`` builds an independent child stream from the parent seed
    plus a sequence of string/int tags, so parallel components (per-slot
    samplers, per-item evaluation shuffles) get streams that do not depend on
    call order.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK
        s = self.seed
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        if not any(state):  # the all-zero state is invalid for xoshiro
            state[0] = 1
        self._s = state

    # -- core stream ------------------------------------------------------

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randint(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection sampling (unbiased)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def choice(self, weights: list[float]) -> int:
        """Index drawn from a (not necessarily normalized) weight vector."""
        total = float(sum(weights))
        if not (total > 0.0) or not math.isfinite(total):
            raise ValueError("choice weights must have positive finite sum")
        r = self.uniform() * total
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                return i
        return len(weights) - 1

    def shuffle(self, items: list) -> None:
        """In-place Fisher–Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order randomized."""
        if k > n:
            raise ValueError(f"cannot sample {k} items from {n}")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]

    def gauss(self) -> float:
        """Standard normal via Box–Muller (cosine branch only, stateless)."""
        u1 = self.uniform()
        u2 = self.uniform()
        while u1 <= 0.0:  # guard log(0)
            u1 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normal(self, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        out = np.empty(int(np.prod(shape)), dtype=np.float64)
        for i in range(out.size):
            out[i] = self.gauss() * std
        return out.reshape(shape).astype(dtype)

    # -- stream management --------------------------------------------------

    def derive(self, *tags) -> "Rng":
        """Child stream keyed by (seed, *tags); independent of draw order."""
        h = mix64(self.seed)
        for tag in tags:
            if isinstance(tag, str):
                data = tag.encode("utf-8")
            elif isinstance(tag, int):
                data = tag.to_bytes(8, "little", signed=False)
            else:
                raise TypeError(f"derive tag must be str or int, got {type(tag)!r}")
            for b in data:
                h = mix64(h ^ b)
        return Rng(h)

    def get_state(self) -> list[int]:
        return list(self._s)

    def set_state(self, state) -> None:
        state = [int(x) & _MASK for x in state]
        if len(state) != 4 or not any(state):
            raise ValueError("invalid xoshiro256** state")
        self._s = state


def fnv1a64(data: bytes, h: int = 0xCBF29CE484222325) -> int:
    """FNV-1a 64-bit over a byte string (pure-Python reference)."""
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & _MASK
    return h
