"""Counter-based randomness and the Laplace sampler.

Every draw is a pure function of ``(seed, key...)``: the key is hashed with
the splitmix64 finaliser, so the value of a noise term depends only on which
term it is, never on evaluation order. Integers are the only key material.
"""

from __future__ import annotations

import math
from fractions import Fraction

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO52 = float(1 << 52)
_TWO53 = float(1 << 53)


def splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash_key(seed: int, *keys: int) -> int:
    h = splitmix64(seed & MASK64)
    for k in keys:
        h = splitmix64(h ^ (k & MASK64))
    return h


def centered_uniform(h: int) -> float:
    """Map 64 random bits to a float in the open interval (-1/2, 1/2), never 0.

    Every intermediate value is exact, so the result is the same on every
    IEEE-754 platform and ``|u|`` never rounds up to 1/2.
    """
    return ((h >> 11) - _TWO52 + 0.5) / _TWO53


def laplace_from_uniform(scale: float, u: float) -> float:
    if scale == 0:
        return 0.0
    sign = 1.0 if u > 0 else -1.0
    return -scale * sign * math.log(1.0 - 2.0 * abs(u))


class CounterRNG:
    """Splittable counter-based generator.

    ``substream(*keys)`` derives an independent generator; ``at(*keys)``
    returns the uniform for an explicit counter; ``next_uniform`` walks an
    internal counter.
    """

    __slots__ = ("seed", "key", "counter", "_prefix")

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        self.counter = 0
        self._prefix = hash_key(self.seed, *self.key)

    def substream(self, *keys: int) -> "CounterRNG":
        return CounterRNG(self.seed, self.key + keys)

    def at(self, *keys: int) -> float:
        h = self._prefix
        for k in keys:
            h = splitmix64(h ^ (k & MASK64))
        return centered_uniform(h)

    def next_uniform(self) -> float:
        u = self.at(self.counter)
        self.counter += 1
        return u

    def laplace_at(self, scale: float, *keys: int) -> float:
        return laplace_from_uniform(scale, self.at(*keys))


def sample_laplace(scale, rng: CounterRNG) -> float:
    """One Laplace(0, scale) draw by inverse CDF; advances ``rng``."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    return laplace_from_uniform(float(scale), rng.next_uniform())


def geometric_budget(k: int, epsilon) -> float:
    """Level-``k`` share of ``epsilon`` under the series 6/(pi^2 k^2)."""
    if k < 1:
        raise ValueError("levels start at 1")
    return 6.0 * float(epsilon) / (math.pi ** 2 * k * k)


def level_budgets(levels: int, epsilon, budget: str) -> list:
    """Budgets for levels ``1..levels`` of a finite tree.

    ``uniform`` splits evenly (exact rationals), ``geometric`` uses the
    series as is, ``renormalized`` rescales the series to spend all of
    ``epsilon`` over the finite levels.
    """
    if budget == "uniform":
        return [Fraction(epsilon) / levels] * levels
    geo = [geometric_budget(k, epsilon) for k in range(1, levels + 1)]
    if budget == "geometric":
        return geo
    if budget == "renormalized":
        total = sum(geo)
        return [g * float(epsilon) / total for g in geo]
    raise ValueError(f"unknown tree budget {budget!r}")
