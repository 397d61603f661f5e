"""Deterministic mean-field solution ``dX/dt = propensities @ B.T``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NonFiniteStateError
from .model import ModelSpec, as_state, check_model, evaluate_rates

NEGATIVE_WARN = -1e-9


@dataclass(frozen=True)
class OdeSolution:
    """States on the output grid: ``times`` (T + 1,), ``states`` (T + 1, M, X)."""

    times: np.ndarray
    states: np.ndarray


def ode_rhs(spec: ModelSpec, t: float, state) -> np.ndarray:
    """Time derivative of the state, ``(M, X)``.  Rows sum to zero."""
    state = as_state(state, dtype=np.float64)
    prop = evaluate_rates(spec, t, state) * state[:, spec.sources]
    return prop @ spec.incidence.T


def _rk4(spec, t0, x0, h, nsub):
    x = x0
    t = t0
    for _ in range(nsub):
        k1 = ode_rhs(spec, t, x)
        k2 = ode_rhs(spec, t + 0.5 * h, x + 0.5 * h * k1)
        k3 = ode_rhs(spec, t + 0.5 * h, x + 0.5 * h * k2)
        k4 = ode_rhs(spec, t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t + h
    return x


def _check_finite(x, t):
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(f"state became non-finite at t = {t}")


def ode_solve(spec: ModelSpec, method: str = "rk4", substeps: int = 10, rtol: float = 1e-6,
              atol: float = 1e-8) -> OdeSolution:
    """Integrate ``spec`` and report the state on its uniform output grid.

    ``method="rk4"`` (default) is classic fourth-order Runge-Kutta with
    ``substeps`` equal steps per output interval.  ``method="dopri5"`` uses
    the adaptive Dormand-Prince 4(5) pair with the given tolerances.
    Negative values below ``-1e-9`` trigger a ``RuntimeWarning``; they are
    not clamped.
    """
    check_model(spec, "ode")
    T = spec.num_steps
    dt = float(spec.time_delta)
    times = spec.initial_step + dt * np.arange(T + 1)
    x0 = np.array(spec.initial_state, dtype=np.float64)
    states = np.empty((T + 1,) + x0.shape)
    states[0] = x0

    if method == "rk4":
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        h = dt / substeps
        x = x0
        for k in range(T):
            x = _rk4(spec, times[k], x, h, substeps)
            _check_finite(x, times[k + 1])
            states[k + 1] = x
    elif method == "dopri5":
        if T > 0:
            shape = x0.shape

            def fun(t, y):
                return ode_rhs(spec, t, y.reshape(shape)).ravel()

            sol = solve_ivp(fun, (times[0], times[-1]), x0.ravel(), method="RK45",
                            t_eval=times, rtol=rtol, atol=atol)
            if not sol.success or sol.y.shape[1] != T + 1:
                raise NonFiniteStateError(f"adaptive solver failed: {sol.message}")
            states[:] = sol.y.T.reshape(states.shape)
            _check_finite(states, times[-1])
    else:
        raise ValueError(f"unknown ODE method '{method}' (use 'rk4' or 'dopri5')")

    if np.any(states < NEGATIVE_WARN):
        warnings.warn(
            f"ODE state went negative (min {states.min():.3g}); consider a smaller time step",
            RuntimeWarning,
            stacklevel=2,
        )
    return OdeSolution(times, states)
