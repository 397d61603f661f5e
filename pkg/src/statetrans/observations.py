"""Observation models layered on top of a latent trajectory."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, xlogy

from . import rng
from .errors import ShapeError


class PoissonIncrements:
    """Counts ``y[k, i] ~ Poisson(scale[i] * (X[k+1, i, c] - X[k, i, c]))``.

    ``c`` is the observed compartment (typically removals), so ``y`` are
    new detections per step.  Small negative increments from the ODE
    solver are floored at zero.
    """

    def __init__(self, compartment: int, scale):
        self.compartment = int(compartment)
        self.scale = np.asarray(scale, dtype=np.float64)
        if np.any(self.scale < 0):
            raise ShapeError("observation scale must be nonnegative")

    def expected(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        inc = np.diff(states[:, :, self.compartment], axis=0)
        return self.scale * np.maximum(inc, 0.0)

    def log_likelihood(self, counts, states) -> float:
        mu = self.expected(states)
        counts = np.asarray(counts)
        if counts.shape != mu.shape:
            raise ShapeError(f"observed counts have shape {counts.shape}, expected {mu.shape}")
        return float(np.sum(xlogy(counts, mu) - mu - gammaln(counts + 1.0)))

    def sample(self, states, stream: rng.RngStream) -> np.ndarray:
        """Draw counts step by step, strata in order within each step."""
        mu = self.expected(states)
        out = np.zeros(mu.shape, dtype=np.int64)
        for k in range(mu.shape[0]):
            for i in range(mu.shape[1]):
                out[k, i] = rng.poisson(stream, mu[k, i])
        return out
