"""Continuous-time Markov jump process: Gillespie sampling and exact likelihood.

Rates are held constant between events and evaluated at the time of the
most recent event (or ``initial_step`` before the first one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import NegativeStateError, ShapeError
from .model import ModelSpec, as_state, check_model, evaluate_rates, evaluate_rates_batch

PAD = -1


@dataclass(frozen=True)
class EventList:
    """Sparse record of jumps: parallel ``times``, ``transitions``, ``units``.

    Slots after extinction are padding: ``time = inf`` and
    ``transition = unit = PAD``.
    """

    times: np.ndarray
    transitions: np.ndarray
    units: np.ndarray

    def __post_init__(self):
        for name, dtype in (("times", np.float64), ("transitions", np.int64), ("units", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.times.shape == self.transitions.shape == self.units.shape):
            raise ShapeError(
                f"EventList arrays differ in length: {self.times.size}, "
                f"{self.transitions.size}, {self.units.size}"
            )

    def __len__(self):
        return self.times.size

    @property
    def num_events(self) -> int:
        """Number of non-padding entries."""
        return int(np.sum(self.transitions != PAD))

    def trimmed(self) -> "EventList":
        n = self.num_events
        return EventList(self.times[:n], self.transitions[:n], self.units[:n])

    def padded(self, length: int) -> "EventList":
        """Pad (or verify) to ``length`` slots."""
        n = len(self)
        if n > length:
            raise ShapeError(f"EventList has {n} entries, more than {length} slots")
        extra = length - n
        return EventList(
            np.concatenate([self.times, np.full(extra, np.inf)]),
            np.concatenate([self.transitions, np.full(extra, PAD)]),
            np.concatenate([self.units, np.full(extra, PAD)]),
        )


class Extinct:
    """Returned by :func:`ctmc_next_event` when no event can occur."""

    def __repr__(self):
        return "Extinct"


EXTINCT = Extinct()


def ctmc_next_event(spec: ModelSpec, t: float, state, stream: rng.RngStream):
    """Draw ``(dt, transition, unit)`` for the next jump, or ``EXTINCT``.

    The flattened propensity matrix is scanned stratum-major, so flat index
    ``j`` maps to ``unit = j // n_transitions``, ``transition = j % n_transitions``.
    """
    state = as_state(state)
    prop = evaluate_rates(spec, t, state) * state[:, spec.sources]
    flat = prop.ravel()
    total = float(flat.sum())
    if total <= 0.0:
        return EXTINCT
    dt = rng.exponential(stream, total)
    j = rng.categorical(stream, flat)
    unit, transition = divmod(j, prop.shape[1])
    return dt, transition, unit


def ctmc_sample(spec: ModelSpec, seed) -> EventList:
    """Simulate ``spec.num_steps`` jumps with the Gillespie direct method."""
    check_model(spec, "continuous")
    stream = rng.as_stream(seed)
    S = spec.num_steps
    times = np.full(S, np.inf)
    transitions = np.full(S, PAD, dtype=np.int64)
    units = np.full(S, PAD, dtype=np.int64)
    state = np.array(spec.initial_state, dtype=np.int64)
    columns = spec.incidence.T
    t = float(spec.initial_step)
    for s in range(S):
        draw = ctmc_next_event(spec, t, state, stream)
        if draw is EXTINCT:
            break
        dt, k, i = draw
        t += dt
        times[s] = t
        transitions[s] = k
        units[s] = i
        state[i] += columns[k]
    return EventList(times, transitions, units)


def ctmc_sample_batch(spec: ModelSpec, seed, n: int) -> list:
    """``n`` independent replicates, replicate ``r`` using child stream ``r``."""
    stream = rng.as_stream(seed)
    return [ctmc_sample(spec, stream.child(r)) for r in range(n)]


def _check_events(spec: ModelSpec, events: EventList):
    M, Z = spec.num_strata, spec.num_transitions
    real = events.transitions != PAD
    n = int(real.sum())
    if not np.all(real[:n]) or np.any(real[n:]):
        raise ShapeError("padding entries must form a contiguous tail")
    if np.any(events.units[real] == PAD) or np.any(events.units[~real] != PAD):
        raise ShapeError("unit and transition padding disagree")
    tr, un, tm = events.transitions[:n], events.units[:n], events.times[:n]
    if np.any((tr < 0) | (tr >= Z)):
        raise ShapeError(f"transition index out of range [0, {Z})")
    if np.any((un < 0) | (un >= M)):
        raise ShapeError(f"unit index out of range [0, {M})")
    if not np.all(np.isfinite(tm)):
        raise ShapeError("event times must be finite")
    if n and tm[0] < spec.initial_step:
        raise ShapeError("first event precedes initial_step")
    if np.any(np.diff(tm) <= 0):
        raise ShapeError("event times must be strictly increasing")
    return n, tr, un, tm


def _event_states(spec, n, tr, un):
    """States before each event and after the last: ``(n + 1, M, X)``."""
    M = spec.num_strata
    X0 = np.asarray(spec.initial_state, dtype=np.int64)
    inc = np.zeros((n + 1, M, X0.shape[1]), dtype=np.int64)
    inc[0] = X0
    inc[np.arange(1, n + 1), un] = spec.incidence.T[tr]
    return np.cumsum(inc, axis=0)


def ctmc_log_prob(spec: ModelSpec, events: EventList) -> float:
    """Log-density of an event sequence.

    Sums ``log(lambda_chosen) - dt * total_rate`` over non-padding events,
    with rates taken at the pre-event state.  Returns ``-inf`` for an
    event with zero propensity or one that empties a compartment below zero.
    """
    check_model(spec, "continuous")
    n, tr, un, tm = _check_events(spec, events)
    states = _event_states(spec, n, tr, un)
    if np.any(states < 0):
        return -math.inf
    if n == 0:
        return 0.0
    dts = np.diff(np.concatenate([[spec.initial_step], tm]))
    times = np.concatenate([[spec.initial_step], tm[:-1]])
    prop = evaluate_rates_batch(spec, times, states[:n]) * states[:n, :, spec.sources]
    chosen = prop[np.arange(n), un, tr]
    if chosen.min() <= 0.0:
        return -math.inf
    total_lp = np.log(chosen).sum() - np.dot(dts, prop.reshape(n, -1).sum(axis=1))
    return float(total_lp)


def ctmc_compute_state(spec: ModelSpec, events: EventList, query_times=None) -> np.ndarray:
    """Reconstruct states from an event list.

    With ``query_times``, returns ``(len(query_times), M, X)`` where each
    state includes every event with time ``<=`` the query time.  Without,
    returns ``(len(events) + 1, M, X)``: the initial state followed by the
    state after each slot (padding slots repeat the final state).
    """
    n, tr, un, tm = _check_events(spec, events)
    states = _event_states(spec, n, tr, un)
    if np.any(states < 0):
        s, i, q = np.argwhere(states < 0)[0]
        raise NegativeStateError(f"event {s - 1} drives compartment {q} of stratum {i} negative")
    if query_times is None:
        tail = np.repeat(states[-1:], len(events) - n, axis=0)
        return np.concatenate([states, tail], axis=0)
    q = np.asarray(query_times, dtype=np.float64).reshape(-1)
    if np.any(np.diff(q) < 0):
        raise ValueError("query_times must be nondecreasing")
    idx = np.searchsorted(tm, q, side="right")
    return states[idx]


__all__ = [
    "EventList",
    "EXTINCT",
    "PAD",
    "ctmc_next_event",
    "ctmc_sample",
    "ctmc_sample_batch",
    "ctmc_log_prob",
    "ctmc_compute_state",
]
