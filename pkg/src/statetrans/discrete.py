"""Discrete-time chain-multinomial approximation.

Within a step of length ``time_delta`` every individual makes at most
one transition.  For a source compartment ``q`` with declared exits
``k``, an individual leaves along ``k`` with probability
``1 - exp(-lambda_k * time_delta)`` and stays with the remaining mass.
Exit counts per (stratum, source compartment) are multinomial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from . import rng
from .errors import NegativeStateError, ProbabilityOverflowError, ShapeError
from .model import ModelSpec, apply_events, as_state, check_model, evaluate_rates, evaluate_rates_batch

# Diagonal entries this far below zero are rounding noise and clamp to 0.
DIAGONAL_SLACK = 1e-12


@dataclass(frozen=True)
class EventTensor:
    """Transition counts of shape ``(T, M, n_transitions)``.

    Slice ``k`` covers ``[t_k, t_k + time_delta)`` with
    ``t_k = initial_step + k * time_delta``.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts)
        if c.ndim != 3:
            raise ShapeError(f"event tensor must be 3-D (steps, strata, transitions), got {c.ndim}-D")
        if c.size and (not np.all(np.isfinite(c)) or np.any(c != np.round(c))):
            raise ShapeError("event counts must be integers")
        c = c.astype(np.int64)
        if np.any(c < 0):
            raise ShapeError("event counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_steps(self) -> int:
        return self.counts.shape[0]

    def __len__(self):
        return self.counts.shape[0]


def _exit_probabilities(spec: ModelSpec, t: float, state) -> np.ndarray:
    """``(M, n_transitions)`` per-individual exit probabilities for one step."""
    lam = evaluate_rates(spec, t, state)
    return -np.expm1(-lam * spec.time_delta)


def _stay_probabilities(spec: ModelSpec, exit_p: np.ndarray) -> np.ndarray:
    """``(M, X)`` probability of remaining in each compartment."""
    M = exit_p.shape[0]
    X = spec.num_compartments
    stay = np.ones((M, X))
    np.subtract.at(stay.T, spec.sources, exit_p.T)
    low = stay < 0
    if np.any(low):
        if np.any(stay < -DIAGONAL_SLACK):
            i, q = np.argwhere(stay < -DIAGONAL_SLACK)[0]
            raise ProbabilityOverflowError(
                f"exit probabilities from compartment {q} in stratum {i} sum to {1 - stay[i, q]:.6g} > 1; "
                "reduce time_delta"
            )
        stay[low] = 0.0
    return stay


def transition_prob_matrix(spec: ModelSpec, t: float, state) -> np.ndarray:
    """Per-stratum right-stochastic matrices, shape ``(M, X, X)``."""
    state = as_state(state)
    exit_p = _exit_probabilities(spec, t, state)
    stay = _stay_probabilities(spec, exit_p)
    M, X = stay.shape
    P = np.zeros((M, X, X))
    dst = np.argmax(spec.incidence == 1, axis=0)
    for k, (q, r) in enumerate(zip(spec.sources, dst)):
        P[:, q, r] += exit_p[:, k]
    idx = np.arange(X)
    P[:, idx, idx] = stay
    return P


def _exit_groups(spec: ModelSpec):
    """For every compartment with exits, the tuple of transition indices leaving it."""
    groups = []
    for q in range(spec.num_compartments):
        ks = tuple(int(k) for k in np.flatnonzero(spec.sources == q))
        if ks:
            groups.append((q, ks))
    return groups


def dtmc_step(spec: ModelSpec, t: float, state, stream: rng.RngStream):
    """One chain-multinomial step; returns ``(events (M, n_transitions), next_state)``.

    Draw order is fixed: source compartments in declaration order, and
    within each compartment the strata in order.  Each multinomial has
    categories ``(stay, exit_1, exit_2, ...)`` with exits in transition order.
    """
    state = as_state(state)
    exit_p = _exit_probabilities(spec, t, state)
    stay = _stay_probabilities(spec, exit_p)
    M = state.shape[0]
    events = np.zeros((M, spec.num_transitions), dtype=np.int64)
    for q, ks in _exit_groups(spec):
        for i in range(M):
            n = int(state[i, q])
            if n == 0:
                continue
            probs = np.empty(len(ks) + 1)
            probs[0] = stay[i, q]
            probs[1:] = exit_p[i, list(ks)]
            # absorb rounding so the categories sum to exactly one
            probs /= probs.sum()
            draw = rng.multinomial(stream, n, probs)
            events[i, list(ks)] = draw[1:]
    return events, apply_events(state, events, spec.incidence)


def dtmc_sample(spec: ModelSpec, seed) -> EventTensor:
    """Simulate ``spec.num_steps`` chained steps."""
    check_model(spec, "discrete")
    stream = rng.as_stream(seed)
    T = spec.num_steps
    out = np.zeros((T, spec.num_strata, spec.num_transitions), dtype=np.int64)
    state = np.array(spec.initial_state, dtype=np.int64)
    for k in range(T):
        t = spec.initial_step + k * spec.time_delta
        out[k], state = dtmc_step(spec, t, state, stream)
    return EventTensor(out)


def dtmc_sample_batch(spec: ModelSpec, seed, n: int) -> list:
    """``n`` independent replicates, replicate ``r`` using child stream ``r``."""
    stream = rng.as_stream(seed)
    return [dtmc_sample(spec, stream.child(r)) for r in range(n)]


def _check_tensor(spec: ModelSpec, events) -> np.ndarray:
    if not isinstance(events, EventTensor):
        events = EventTensor(events)
    c = events.counts
    if c.shape[1:] != (spec.num_strata, spec.num_transitions):
        raise ShapeError(
            f"event tensor has shape {c.shape}, expected (T, {spec.num_strata}, {spec.num_transitions})"
        )
    return c


def _trajectory(spec: ModelSpec, counts: np.ndarray) -> np.ndarray:
    X0 = np.asarray(spec.initial_state)
    deltas = counts @ spec.incidence.T
    return np.concatenate([X0[np.newaxis], X0 + np.cumsum(deltas, axis=0)], axis=0)


def dtmc_log_prob(spec: ModelSpec, events) -> float:
    """Log-pmf of an event tensor, including multinomial coefficients.

    ``0 * log(0)`` is taken as 0.  Returns ``-inf`` when exits exceed the
    occupancy of their source compartment at any step.  Tensors shorter
    than ``num_steps`` are scored over their own length.
    """
    check_model(spec, "discrete")
    counts = _check_tensor(spec, events)
    T = counts.shape[0]
    if T == 0:
        return 0.0
    states = _trajectory(spec, counts)
    X = spec.num_compartments
    src = spec.sources
    # exits[k, i, q] = individuals leaving compartment q in stratum i at step k
    exits = np.zeros((T, spec.num_strata, X), dtype=np.int64)
    np.add.at(exits.transpose(2, 0, 1), src, counts.transpose(2, 0, 1))
    occupancy = states[:-1]
    stays = occupancy - exits
    if np.any(stays < 0):
        return -math.inf

    times = spec.initial_step + spec.time_delta * np.arange(T)
    exit_p = -np.expm1(-evaluate_rates_batch(spec, times, occupancy) * spec.time_delta)
    stay_p = _stay_probabilities(spec, exit_p.reshape(T * spec.num_strata, -1)).reshape(occupancy.shape)

    has_exit = np.zeros(X, dtype=bool)
    has_exit[src] = True
    lp = (
        gammaln(occupancy[..., has_exit] + 1.0).sum()
        - gammaln(stays[..., has_exit] + 1.0).sum()
        - gammaln(counts + 1.0).sum()
        + xlogy(stays[..., has_exit], stay_p[..., has_exit]).sum()
        + xlogy(counts, exit_p).sum()
    )
    return float(lp)


def dtmc_compute_state(spec: ModelSpec, events) -> np.ndarray:
    """States at every grid point, ``(T + 1, M, X)``; index 0 is the initial state."""
    counts = _check_tensor(spec, events)
    states = _trajectory(spec, counts)
    if np.any(states < 0):
        k, i, q = np.argwhere(states < 0)[0]
        raise NegativeStateError(f"step {k - 1} drives compartment {q} of stratum {i} negative")
    return states
