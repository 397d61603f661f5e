"""Seeded, splittable random streams and the samplers built on them.

Every sampler consumes uniforms from an :class:`RngStream` through a
fixed algorithm (inverse CDF for the exponential, a cumulative scan for
the categorical, CDF inversion for binomial and Poisson, conditional
binomials for the multinomial), so results are reproducible from the
seed alone.

The underlying bit generator is numpy's PCG64 seeded through
``SeedSequence(seed, spawn_key=key)``.  ``stream.child(i)`` returns the
stream with key ``key + (i,)``; it depends only on the parent's seed and
key, never on how many draws the parent has made.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import DomainError

_MAX_SEED = 2**64 - 1


class RngStream:
    """A single-owner stream of uniforms in ``[0, 1)``."""

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, key: tuple = ()):
        seed = int(seed)
        if not 0 <= seed <= _MAX_SEED:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(index),))

    def uniform(self) -> float:
        return float(self._gen.random())

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_stream(seed) -> RngStream:
    """Accept an integer seed or an existing stream."""
    if isinstance(seed, RngStream):
        return seed
    return RngStream(seed)


def uniform(stream: RngStream) -> float:
    return stream.uniform()


def exponential(stream: RngStream, rate: float) -> float:
    """Waiting time with the given rate, ``-log(1 - u) / rate``."""
    if not (rate > 0 and math.isfinite(rate)):
        raise DomainError(f"exponential rate must be positive and finite, got {rate}")
    return -math.log1p(-stream.uniform()) / rate


def categorical(stream: RngStream, weights) -> int:
    """Index ``i`` with probability ``weights[i] / sum(weights)``.

    One uniform ``u`` is drawn and the first index whose cumulative weight
    exceeds ``u * total`` is returned, so zero-weight entries are never
    chosen.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DomainError("categorical weights must be finite and nonnegative")
    cum = np.cumsum(w)
    total = cum[-1]
    if not total > 0:
        raise DomainError("categorical weights sum to zero")
    target = stream.uniform() * total
    return int(np.searchsorted(cum, target, side="right"))


def _binomial_log_pmf(k, n, p):
    return (
        math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
        + k * math.log(p) + (n - k) * math.log1p(-p)
    )


def binomial(stream: RngStream, n: int, p: float) -> int:
    """Binomial draw by inverting the CDF at a single uniform.

    Returns the smallest ``k`` with ``F(k) >= u``.  The search starts at
    the mode, where ``F`` is evaluated with the regularized incomplete
    beta function, then walks with the pmf recurrence, so the cost is
    about one standard deviation of steps.
    """
    n = int(n)
    if n < 0:
        raise DomainError(f"binomial n must be nonnegative, got {n}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"binomial p must lie in [0, 1], got {p}")
    u = stream.uniform()
    if n == 0 or p == 0.0:
        return 0
    if p == 1.0:
        return n
    k = min(int((n + 1) * p), n)
    pmf = math.exp(_binomial_log_pmf(k, n, p))
    cdf = 1.0 if k == n else float(special.bdtr(k, n, p))
    ratio = p / (1.0 - p)
    if cdf >= u:
        # walk down while F(k - 1) still covers u
        while k > 0:
            below = cdf - pmf
            if below < u:
                break
            cdf = below
            pmf *= k / ((n - k + 1) * ratio)
            k -= 1
    else:
        while cdf < u and k < n:
            pmf *= (n - k) * ratio / (k + 1)
            k += 1
            cdf += pmf
            if pmf == 0.0:
                break
    return k


def poisson(stream: RngStream, rate: float) -> int:
    """Poisson draw by CDF inversion from the mode, as for :func:`binomial`."""
    if not (rate >= 0 and math.isfinite(rate)):
        raise DomainError(f"poisson rate must be finite and nonnegative, got {rate}")
    u = stream.uniform()
    if rate == 0:
        return 0
    k = int(rate)
    pmf = math.exp(k * math.log(rate) - rate - math.lgamma(k + 1))
    cdf = float(special.pdtr(k, rate))
    if cdf >= u:
        while k > 0:
            below = cdf - pmf
            if below < u:
                break
            cdf = below
            pmf *= k / rate
            k -= 1
    else:
        while cdf < u:
            k += 1
            pmf *= rate / k
            cdf += pmf
            if pmf == 0.0:
                break
    return k


def multinomial(stream: RngStream, n: int, probs) -> np.ndarray:
    """Multinomial counts by conditional binomials in index order.

    Category ``k`` receives ``Binomial(remaining, p_k / remaining_mass)``
    and the last category with positive mass takes what is left.
    """
    p = np.asarray(probs, dtype=np.float64).ravel()
    n = int(n)
    if n < 0:
        raise DomainError(f"multinomial n must be nonnegative, got {n}")
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("multinomial probabilities must be nonnegative and sum to 1")
    out = np.zeros(p.size, dtype=np.int64)
    # suffix[k] = mass of categories k.. ; recomputed from the tail to avoid drift
    suffix = np.cumsum(p[::-1])[::-1]
    remaining = n
    last = p.size - 1
    for k in range(p.size):
        if remaining == 0:
            break
        if k == last or (k + 1 <= last and suffix[k + 1] == 0.0):
            out[k] = remaining
            break
        q = p[k] / suffix[k] if suffix[k] > 0 else 0.0
        x = binomial(stream, remaining, min(max(q, 0.0), 1.0))
        out[k] = x
        remaining -= x
    return out
