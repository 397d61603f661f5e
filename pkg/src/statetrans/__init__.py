"""Simulation and likelihood for compartmental state-transition models.

A model is an integrator kind, an incidence matrix and per-capita rate
functions.  The same specification can be sampled exactly in continuous
time (Gillespie), approximately in discrete time (chain-multinomial),
or solved as a mean-field ODE, and every stochastic sample can be scored
under its exact log-likelihood.
"""

from .continuous import EventList, ctmc_compute_state, ctmc_log_prob, ctmc_sample, ctmc_sample_batch
from .discrete import (
    EventTensor,
    dtmc_compute_state,
    dtmc_log_prob,
    dtmc_sample,
    dtmc_sample_batch,
    dtmc_step,
    transition_prob_matrix,
)
from .dsl import RateExpression, evaluate, format_expr, parse_expression
from .errors import (
    DomainError,
    EvalError,
    InvalidRateError,
    MissingParameterError,
    NegativeStateError,
    NonFiniteObjectiveError,
    NonFiniteStateError,
    ParseError,
    ProbabilityOverflowError,
    ShapeError,
    StateTransitionError,
    UnknownIdentifierError,
    ValidationError,
)
from .inference import (
    BootstrapResult,
    FitResult,
    binomial_log_pmf,
    bootstrap,
    fit_mle,
    multinomial_log_pmf,
    nelder_mead_minimize,
    poisson_log_pmf,
)
from .model import (
    ModelSpec,
    apply_events,
    check_model,
    evaluate_rates,
    incidence_from_transitions,
    total_propensity_matrix,
    validate_model,
)
from .modelfile import ModelFile, bundled_model_path, load_model, parse_model_file
from .observations import PoissonIncrements
from .ode import OdeSolution, ode_rhs, ode_solve
from .rng import RngStream
from .workflow import FitProblem

__version__ = "0.1.0"
