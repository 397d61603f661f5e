"""Likelihood helpers, Nelder-Mead maximum likelihood, and parametric bootstrap."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import rng
from .errors import DomainError, NonFiniteObjectiveError

REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5
STEP_FRACTION = 0.05
MIN_STEP = 0.00025


# --- scalar log-pmfs --------------------------------------------------------
# Written with math.lgamma on plain floats; the vectorised likelihoods in the
# integrator modules are checked against these.

def poisson_log_pmf(k: int, rate: float) -> float:
    """``k ln(rate) - rate - ln k!``."""
    if rate < 0 or not math.isfinite(rate):
        raise DomainError(f"Poisson rate must be finite and >= 0, got {rate}")
    if k < 0 or k != int(k):
        raise DomainError(f"Poisson count must be a nonnegative integer, got {k}")
    k = int(k)
    if rate == 0:
        return 0.0 if k == 0 else -math.inf
    return k * math.log(rate) - rate - math.lgamma(k + 1)


def multinomial_log_pmf(counts: Sequence[int], n: int, probs: Sequence[float]) -> float:
    """Full multinomial log-pmf with ``0 ** 0 = 1``."""
    counts = [int(c) for c in counts]
    probs = [float(p) for p in probs]
    if len(counts) != len(probs):
        raise DomainError("counts and probs differ in length")
    if any(c < 0 for c in counts) or sum(counts) != n:
        raise DomainError(f"counts must be nonnegative and sum to n = {n}")
    if any(p < 0 or not math.isfinite(p) for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise DomainError("probabilities must be nonnegative and sum to 1")
    lp = math.lgamma(n + 1)
    for c, p in zip(counts, probs):
        lp -= math.lgamma(c + 1)
        if c > 0:
            if p == 0:
                return -math.inf
            lp += c * math.log(p)
    return lp


def binomial_log_pmf(k: int, n: int, p: float) -> float:
    if not 0 <= k <= n:
        raise DomainError(f"binomial count {k} outside [0, {n}]")
    return multinomial_log_pmf((k, n - k), n, (p, 1.0 - p))


# --- optimiser ----------------------------------------------------------------

@dataclass
class FitResult:
    """Outcome of a minimisation.  ``value`` is the objective at ``position``."""

    position: np.ndarray
    value: float
    converged: bool
    iterations: int
    labels: tuple = ()
    message: str = ""
    evaluations: int = 0

    def as_dict(self) -> dict:
        return {
            "parameters": {k: float(v) for k, v in zip(self.labels, self.position)},
            "negative_log_likelihood": float(self.value),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "evaluations": int(self.evaluations),
            "message": self.message,
        }

    def params(self) -> dict:
        return dict(zip(self.labels, map(float, self.position)))


def initial_simplex(x0) -> np.ndarray:
    """``x0`` plus one vertex per coordinate, stepped by ``max(5% |x_i|, 0.00025)``."""
    x0 = np.asarray(x0, dtype=np.float64)
    d = x0.size
    simplex = np.tile(x0, (d + 1, 1))
    for i in range(d):
        simplex[i + 1, i] += max(STEP_FRACTION * abs(x0[i]), MIN_STEP)
    return simplex


def nelder_mead_minimize(objective: Callable, initial_vertex, func_tolerance: float = 1e-8,
                         max_iterations: int = 1000) -> FitResult:
    """Minimise ``objective`` with the downhill simplex method.

    Converged when ``max(f) - min(f)`` over the simplex is at most
    ``func_tolerance``.  Running out of iterations returns
    ``converged=False`` rather than raising.  ``NaN`` during the search is
    treated as ``+inf``; a non-finite value on the initial simplex raises
    :class:`NonFiniteObjectiveError`.
    """
    x0 = np.atleast_1d(np.asarray(initial_vertex, dtype=np.float64))
    if x0.ndim != 1 or x0.size < 1:
        raise ValueError("initial vertex must be a non-empty vector")
    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        v = float(objective(x))
        return math.inf if math.isnan(v) else v

    simplex = initial_simplex(x0)
    values = np.array([f(x) for x in simplex])
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise NonFiniteObjectiveError(
            f"objective is {values[bad]} at initial simplex vertex {simplex[bad].tolist()}"
        )
    flat = values.max() == values.min()
    d = x0.size
    it = 0
    converged = False
    while True:
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if values[-1] - values[0] <= func_tolerance:
            converged = True
            break
        if it >= max_iterations:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = f(xr)
        if fr < values[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + CONTRACT * (worst - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        best = simplex[0]
        for i in range(1, d + 1):
            simplex[i] = best + SHRINK * (simplex[i] - best)
            values[i] = f(simplex[i])

    if converged and flat and it == 0:
        return FitResult(simplex[0].copy(), float(values[0]), False, it,
                         message="objective is flat around the initial vertex; parameters are not identified",
                         evaluations=evals)
    message = "converged" if converged else f"reached max_iterations = {max_iterations}"
    return FitResult(simplex[0].copy(), float(values[0]), converged, it, message=message, evaluations=evals)


# --- maximum likelihood ---------------------------------------------------------

def _transforms(estimate, log_transform):
    flags = np.array([name in set(log_transform) for name in estimate])
    unknown = set(log_transform) - set(estimate)
    if unknown:
        raise ValueError(f"log_transform names parameters that are not estimated: {sorted(unknown)}")
    return flags


def fit_mle(log_likelihood: Callable[[dict, object], float], data, initial: Mapping[str, float],
            estimate: Sequence[str] | None = None, log_transform: Sequence[str] = (),
            func_tolerance: float = 1e-8, max_iterations: int = 2000) -> FitResult:
    """Maximise ``log_likelihood(params, data)`` over the ``estimate`` parameters.

    ``initial`` supplies the starting value of every parameter; those not
    in ``estimate`` stay fixed.  Parameters listed in ``log_transform`` are
    searched on the log scale (they must start positive).  The result is
    reported on the natural scale with ``value`` the negative log-likelihood.
    """
    base = {k: float(v) for k, v in initial.items()}
    estimate = tuple(base) if estimate is None else tuple(estimate)
    missing = [k for k in estimate if k not in base]
    if missing:
        raise ValueError(f"no initial value for {missing}")
    logs = _transforms(estimate, log_transform)
    x0 = np.array([base[k] for k in estimate])
    if np.any(x0[logs] <= 0):
        raise ValueError("log-transformed parameters must start positive")
    z0 = np.where(logs, np.log(np.where(logs, x0, 1.0)), x0)

    def to_params(z):
        x = np.where(logs, np.exp(z), z)
        p = dict(base)
        p.update(zip(estimate, map(float, x)))
        return p

    def objective(z):
        return -log_likelihood(to_params(z), data)

    res = nelder_mead_minimize(objective, z0, func_tolerance, max_iterations)
    res.position = np.where(logs, np.exp(res.position), res.position)
    res.labels = estimate
    return res


# --- bootstrap ----------------------------------------------------------------

@dataclass
class BootstrapResult:
    """Refitted parameters per replicate; ``converged`` flags usable rows."""

    labels: tuple
    samples: np.ndarray
    converged: np.ndarray
    messages: list = field(default_factory=list)

    def __len__(self):
        return self.samples.shape[0]

    def quantiles(self, q) -> np.ndarray:
        """Per-parameter quantiles over converged replicates only."""
        ok = self.samples[self.converged]
        if ok.shape[0] == 0:
            return np.full((np.size(q), len(self.labels)), np.nan)
        return np.quantile(ok, q, axis=0)

    def interval(self, level: float = 0.95) -> np.ndarray:
        a = (1.0 - level) / 2.0
        return self.quantiles([a, 1.0 - a])


def _replicate(r, seed, simulate, log_likelihood, start, estimate, log_transform, func_tolerance,
               max_iterations):
    stream = rng.as_stream(seed).child(r)
    data = simulate(dict(start), stream)
    res = fit_mle(log_likelihood, data, start, estimate, log_transform, func_tolerance, max_iterations)
    return res.position, res.converged, res.message


def bootstrap(fitted: FitResult, simulate: Callable[[dict, rng.RngStream], object],
              log_likelihood: Callable[[dict, object], float], n_replicates: int, seed: int,
              fixed: Mapping[str, float] | None = None, log_transform: Sequence[str] = (),
              func_tolerance: float = 1e-8, max_iterations: int = 2000, n_jobs: int = 1,
              require_converged: bool = True) -> BootstrapResult:
    """Parametric bootstrap around ``fitted``.

    Replicate ``r`` simulates a dataset at the fitted parameters with child
    stream ``r`` of ``seed`` and refits starting from the fitted position.
    ``fixed`` holds parameters that were not estimated.  ``n_jobs`` > 1
    spreads replicates over processes; results do not depend on it.
    """
    if require_converged and not fitted.converged:
        raise ValueError("bootstrap requires a converged fit")
    n_replicates = int(n_replicates)
    if n_replicates < 0:
        raise ValueError("n_replicates must be >= 0")
    labels = tuple(fitted.labels)
    start = dict(fixed or {})
    start.update(fitted.params())
    args = (seed, simulate, log_likelihood, start, labels, tuple(log_transform), func_tolerance,
            max_iterations)
    if n_jobs == 1 or n_replicates < 2:
        out = [_replicate(r, *args) for r in range(n_replicates)]
    else:
        from joblib import Parallel, delayed

        out = Parallel(n_jobs=n_jobs)(delayed(_replicate)(r, *args) for r in range(n_replicates))
    samples = np.array([o[0] for o in out], dtype=np.float64).reshape(n_replicates, len(labels))
    converged = np.array([o[1] for o in out], dtype=bool)
    return BootstrapResult(labels, samples, converged, [o[2] for o in out])
