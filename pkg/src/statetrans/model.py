"""Model triplet, state algebra and validation shared by all integrators.

A model is described by an integrator kind, an incidence matrix ``B`` of
shape ``(n_compartments, n_transitions)`` and one rate function per
transition (column of ``B``).  Rate functions have the signature
``fn(t, state) -> array`` and return *per-capita* hazards for the
individuals currently in the transition's source compartment, one value
per stratum (a scalar is broadcast to every stratum).  The engine turns
those into total propensities by multiplying with the source counts.

States are ``(n_strata, n_compartments)`` arrays; event matrices are
``(n_strata, n_transitions)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidRateError, NegativeStateError, ValidationError

INTEGRATORS = ("continuous", "discrete", "ode")

RateFn = Callable[[float, np.ndarray], "np.ndarray | float"]


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to simulate, score or solve a state-transition model.

    Array fields are copied and made read-only on construction, so a spec
    can be shared freely between threads and replicates.
    """

    integrator: str
    incidence: np.ndarray
    rates: tuple
    initial_state: np.ndarray
    num_steps: int
    initial_step: float = 0.0
    time_delta: float = 1.0
    compartments: tuple | None = None
    name: str = "model"
    sources: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        incidence = np.array(self.incidence)
        incidence.setflags(write=False)
        state = np.array(self.initial_state)
        if state.ndim == 1:
            state = state[np.newaxis, :]
        state.setflags(write=False)
        object.__setattr__(self, "incidence", incidence)
        object.__setattr__(self, "initial_state", state)
        object.__setattr__(self, "rates", tuple(self.rates))
        if self.compartments is not None:
            object.__setattr__(self, "compartments", tuple(self.compartments))
        src = _sources(incidence)
        src.setflags(write=False)
        object.__setattr__(self, "sources", src)

    @property
    def num_compartments(self) -> int:
        return self.incidence.shape[0]

    @property
    def num_transitions(self) -> int:
        return self.incidence.shape[1] if self.incidence.ndim == 2 else 0

    @property
    def num_strata(self) -> int:
        return self.initial_state.shape[0]

    def replace(self, **changes) -> "ModelSpec":
        """Return a copy with some fields changed."""
        kw = {
            "integrator": self.integrator,
            "incidence": self.incidence,
            "rates": self.rates,
            "initial_state": self.initial_state,
            "num_steps": self.num_steps,
            "initial_step": self.initial_step,
            "time_delta": self.time_delta,
            "compartments": self.compartments,
            "name": self.name,
        }
        kw.update(changes)
        return ModelSpec(**kw)


def _sources(incidence):
    # row index of the -1 entry of every column; -1 when there is none
    if incidence.ndim != 2 or incidence.size == 0:
        return np.zeros(0, dtype=np.intp)
    src = np.full(incidence.shape[1], -1, dtype=np.intp)
    rows, cols = np.nonzero(incidence == -1)
    src[cols] = rows
    return src


def destinations(incidence) -> np.ndarray:
    """Row index of the +1 entry in every column of ``incidence``."""
    incidence = np.asarray(incidence)
    dst = np.full(incidence.shape[1], -1, dtype=np.intp)
    rows, cols = np.nonzero(incidence == 1)
    dst[cols] = rows
    return dst


def incidence_from_transitions(num_compartments: int, transitions: Sequence[tuple[int, int]]) -> np.ndarray:
    """Build ``B`` from ``(source, destination)`` index pairs."""
    B = np.zeros((num_compartments, len(transitions)), dtype=np.int64)
    for k, (src, dst) in enumerate(transitions):
        if src == dst:
            raise ValidationError(f"transition {k} has identical source and destination")
        B[src, k] = -1
        B[dst, k] = 1
    return B


def validate_model(spec: ModelSpec) -> list[str]:
    """Return every violated invariant of ``spec``; an empty list means valid.

    Never raises.  Rate functions are not called.
    """
    out = []
    if spec.integrator not in INTEGRATORS:
        out.append(f"integrator: '{spec.integrator}' is not one of {', '.join(INTEGRATORS)}")

    B = spec.incidence
    ok_B = True
    if B.ndim != 2:
        out.append(f"incidence: expected a 2-D matrix, got {B.ndim}-D")
        ok_B = False
    elif not np.issubdtype(B.dtype, np.number) or not np.all(np.isfinite(B)) or np.any(B != np.round(B)):
        out.append("incidence: entries must be integers")
        ok_B = False
    else:
        if B.shape[0] < 2:
            out.append(f"incidence: need at least 2 compartments (rows), got {B.shape[0]}")
        for k in range(B.shape[1]):
            col = B[:, k]
            total = col.sum()
            if total != 0:
                out.append(f"incidence column {k}: sums to {int(total)}, expected 0 (closed population)")
            n_minus = int(np.sum(col == -1))
            n_plus = int(np.sum(col == 1))
            n_other = int(np.sum((col != 0) & (col != 1) & (col != -1)))
            if n_minus != 1 or n_plus != 1 or n_other:
                out.append(
                    f"incidence column {k}: expected exactly one -1 and one +1, "
                    f"found {n_minus} x -1, {n_plus} x +1, {n_other} other nonzero"
                )

    if ok_B and len(spec.rates) != B.shape[1]:
        out.append(f"rates: {len(spec.rates)} rate functions for {B.shape[1]} transitions")
    for k, fn in enumerate(spec.rates):
        if not callable(fn):
            out.append(f"rates[{k}]: not callable")

    X = spec.initial_state
    if X.ndim != 2:
        out.append(f"initial_state: expected (strata, compartments) matrix, got {X.ndim}-D")
    else:
        if X.shape[0] < 1:
            out.append("initial_state: need at least one stratum")
        if ok_B and X.shape[1] != B.shape[0]:
            out.append(f"initial_state: {X.shape[1]} columns for {B.shape[0]} compartments")
        if not np.issubdtype(X.dtype, np.number):
            out.append("initial_state: entries must be numeric")
        else:
            if not np.all(np.isfinite(X)):
                out.append("initial_state: entries must be finite")
            elif np.any(X < 0):
                i, q = np.argwhere(X < 0)[0]
                out.append(f"initial_state[{i}, {q}]: negative count {X[i, q]}")
            if spec.integrator in ("continuous", "discrete") and np.all(np.isfinite(X)):
                if np.any(X != np.round(X)):
                    out.append("initial_state: stochastic models need integer counts")

    if not isinstance(spec.num_steps, (int, np.integer)) or isinstance(spec.num_steps, bool):
        out.append(f"num_steps: expected an integer, got {spec.num_steps!r}")
    elif spec.num_steps < 0:
        out.append(f"num_steps: must be >= 0, got {spec.num_steps}")
    if not np.isfinite(spec.initial_step):
        out.append("initial_step: must be finite")
    if spec.integrator in ("discrete", "ode"):
        if not (np.isfinite(spec.time_delta) and spec.time_delta > 0):
            out.append(f"time_delta: must be a positive real, got {spec.time_delta}")

    if spec.compartments is not None:
        names = spec.compartments
        if len(set(names)) != len(names):
            out.append("compartments: names must be unique")
        if ok_B and len(names) != B.shape[0]:
            out.append(f"compartments: {len(names)} names for {B.shape[0]} rows of incidence")
    return out


def check_model(spec: ModelSpec, integrator: str | None = None) -> ModelSpec:
    """Raise :class:`ValidationError` unless ``spec`` is valid (and of ``integrator`` kind)."""
    problems = validate_model(spec)
    if integrator is not None and spec.integrator != integrator:
        problems.append(f"integrator: expected '{integrator}', model is '{spec.integrator}'")
    if problems:
        raise ValidationError(problems)
    return spec


def as_state(state, dtype=None) -> np.ndarray:
    state = np.asarray(state, dtype=dtype)
    if state.ndim == 1:
        state = state[np.newaxis, :]
    return state


def apply_events(state, event_counts, incidence) -> np.ndarray:
    """Return ``state + event_counts @ incidence.T``.

    ``event_counts`` is ``(n_strata, n_transitions)``.  The input is not
    modified.  Raises :class:`NegativeStateError` if a count would drop
    below zero.
    """
    state = as_state(state)
    Z = np.asarray(event_counts)
    if Z.ndim == 1:
        Z = Z[np.newaxis, :]
    B = np.asarray(incidence)
    new = state + Z @ B.T
    if np.any(new < 0):
        i, q = np.argwhere(new < 0)[0]
        raise NegativeStateError(f"event set drives compartment {q} of stratum {i} to {new[i, q]}")
    return new


def evaluate_rates(spec: ModelSpec, t: float, state: np.ndarray) -> np.ndarray:
    """Per-capita hazards as an ``(n_strata, n_transitions)`` array."""
    M = state.shape[0]
    out = np.empty((M, len(spec.rates)), dtype=np.float64)
    with np.errstate(all="ignore"):
        for k, fn in enumerate(spec.rates):
            # compiled expressions skip their own checks; the ones below cover them
            value = fn.unchecked(t, state) if hasattr(fn, "unchecked") else fn(t, state)
            if isinstance(value, np.ndarray) and value.ndim and value.shape != (M,):
                raise InvalidRateError(
                    f"rate function {k} returned shape {value.shape}, expected ({M},) or scalar"
                )
            try:
                out[:, k] = value
            except (ValueError, TypeError):
                raise InvalidRateError(
                    f"rate function {k} returned shape {np.shape(value)}, expected ({M},) or scalar"
                ) from None
    # one reduction covers NaN/inf, a second negative values
    if not math.isfinite(out.sum()) or out.min() < 0.0:
        _rate_error(out)
    return out


def evaluate_rates_batch(spec: ModelSpec, times, states) -> np.ndarray:
    """Hazards for a stack of states, ``(n, n_strata, n_transitions)``.

    ``times`` is ``(n,)`` and ``states`` ``(n, M, X)``.  Rate functions
    with a ``batch(times, states)`` method are called once; plain
    functions are called state by state.
    """
    times = np.asarray(times, dtype=np.float64)
    states = np.asarray(states)
    n, M = states.shape[:2]
    if all(hasattr(fn, "batch") for fn in spec.rates):
        out = np.empty((n, M, len(spec.rates)), dtype=np.float64)
        for k, fn in enumerate(spec.rates):
            out[:, :, k] = fn.batch(times, states)
        if n and (not out.min() >= 0.0 or not math.isfinite(out.sum())):
            _rate_error(out.reshape(n * M, -1))
        return out
    out = np.empty((n, M, len(spec.rates)), dtype=np.float64)
    for s in range(n):
        out[s] = evaluate_rates(spec, float(times[s]), states[s])
    return out


def _rate_error(out):
    if not np.all(np.isfinite(out)):
        k = int(np.argwhere(~np.isfinite(out))[0][1])
        raise InvalidRateError(f"rate function {k} returned a non-finite value")
    k = int(np.argwhere(out < 0)[0][1])
    raise InvalidRateError(f"rate function {k} returned a negative value")


def total_propensity_matrix(spec: ModelSpec, t: float, state) -> np.ndarray:
    """Total event rates, ``(n_strata, n_transitions)``.

    Entry ``(i, k)`` is the per-capita rate of transition ``k`` in stratum
    ``i`` times the number of individuals in its source compartment.
    """
    state = as_state(state)
    return evaluate_rates(spec, t, state) * state[:, spec.sources]
