"""Glue between a parsed model file, its data, and the fitting routines."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import dsl, rng
from .continuous import EventList, ctmc_log_prob, ctmc_sample
from .discrete import EventTensor, dtmc_log_prob, dtmc_sample
from .errors import (
    EvalError,
    InvalidRateError,
    NegativeStateError,
    NonFiniteStateError,
    ProbabilityOverflowError,
    ValidationError,
)
from .modelfile import ModelFile
from .observations import PoissonIncrements
from .ode import ode_solve

# numerical failures that mean "this parameter vector is impossible"
_INFEASIBLE = (EvalError, InvalidRateError, NegativeStateError, NonFiniteStateError, ProbabilityOverflowError)


class FitProblem:
    """A model file plus fixed command-line overrides.

    Provides ``simulate(params, stream)`` and ``log_likelihood(params, data)``
    in the form :func:`statetrans.inference.fit_mle` and
    :func:`statetrans.inference.bootstrap` expect.  The data kind follows
    the integrator and the ``[observation]`` section: an
    :class:`EventList`, an :class:`EventTensor`, or a ``(T, M)`` count
    array of Poisson-observed increments.
    """

    def __init__(self, model: ModelFile, overrides: Mapping[str, float] | None = None, integrator=None,
                 num_steps=None, initial_step=None, time_delta=None):
        self.model = model
        self.overrides = dict(overrides or {})
        self.build_options = dict(integrator=integrator, num_steps=num_steps, initial_step=initial_step,
                                  time_delta=time_delta)
        self.kind = integrator or model.kind
        obs = model.observation or {"kind": "events"}
        self.observation_kind = obs["kind"]
        if self.observation_kind == "events" and self.kind == "ode":
            raise ValidationError("an ode model needs an [observation] of kind poisson_increments to be fitted")
        if self.observation_kind == "poisson_increments" and self.kind != "ode":
            raise ValidationError("poisson_increments observations are supported for ode models only")
        self.solver = model.solver_options

    def parameters(self, extra: Mapping[str, float] | None = None) -> dict:
        merged = dict(self.overrides)
        merged.update(extra or {})
        return self.model.parameter_values(merged)

    def spec(self, params: Mapping[str, float]):
        return self.model.build(self.parameters(params), **self.build_options)

    def observation(self, params: Mapping[str, float]) -> PoissonIncrements:
        obs = self.model.observation
        j = self.model.compartments.index(obs["compartment"])
        params = self.parameters(params)
        f = dsl.compile_expr(obs["scale"])
        with np.errstate(all="ignore"):
            value = f(0.0, np.zeros((self.model.num_strata, 0)), params, self.model.arrays)
        return PoissonIncrements(j, dsl.to_vector(value, self.model.num_strata, "observation scale"))

    def simulate(self, params: Mapping[str, float], stream):
        spec = self.spec(params)
        if self.kind == "continuous":
            return ctmc_sample(spec, stream)
        if self.kind == "discrete":
            return dtmc_sample(spec, stream)
        sol = ode_solve(spec, **self.solver)
        return self.observation(params).sample(sol.states, rng.as_stream(stream))

    def log_likelihood(self, params: Mapping[str, float], data) -> float:
        """Log-likelihood of ``data``; ``-inf`` where the parameters are infeasible."""
        try:
            spec = self.spec(params)
            if self.kind == "continuous":
                return ctmc_log_prob(spec, data)
            if self.kind == "discrete":
                return dtmc_log_prob(spec, data)
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sol = ode_solve(spec, **self.solver)
            return self.observation(params).log_likelihood(data, sol.states)
        except _INFEASIBLE:
            return -np.inf

    def check_data(self, data):
        """Raise :class:`ValidationError` unless ``data`` fits this problem."""
        spec = self.spec({})
        if self.observation_kind == "poisson_increments":
            arr = np.asarray(data)
            shape = (spec.num_steps, spec.num_strata)
            if arr.shape != shape:
                raise ValidationError(f"observed counts have shape {arr.shape}, expected {shape}")
            if arr.size == 0:
                raise ValidationError("observed data is empty")
        elif self.kind == "continuous":
            if not isinstance(data, EventList):
                raise ValidationError("continuous models are fitted to event lists")
            if data.num_events == 0:
                raise ValidationError("event list is empty")
        else:
            if not isinstance(data, EventTensor):
                raise ValidationError("discrete models are fitted to event tensors")
            if data.num_steps == 0:
                raise ValidationError("event tensor is empty")
