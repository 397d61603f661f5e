"""Exception hierarchy shared by every module of the package."""


class StateTransitionError(Exception):
    """Base class for all errors raised by statetrans."""


class ValidationError(StateTransitionError, ValueError):
    """A model definition violates one or more structural invariants.

    ``violations`` holds one human readable message per problem found.
    """

    def __init__(self, violations, location=None):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        self.location = location
        msg = "; ".join(self.violations)
        if location:
            msg = f"{location}: {msg}"
        super().__init__(msg)


class MissingParameterError(ValidationError):
    """A parameter without a default value was not supplied."""

    def __init__(self, name):
        self.name = name
        super().__init__(f"parameter '{name}' has no default value and was not set")


class NegativeStateError(StateTransitionError, ValueError):
    """Applying an event set would drive some compartment count below zero."""


class InvalidRateError(StateTransitionError, ValueError):
    """A rate function returned negative, non-finite or wrongly shaped output."""


class DomainError(StateTransitionError, ValueError):
    """An argument lies outside the domain of a distribution or function."""


class ShapeError(StateTransitionError, ValueError):
    """An events object does not match the shapes implied by the model."""


class ProbabilityOverflowError(StateTransitionError, ValueError):
    """Competing exit probabilities from one compartment sum to more than one.

    Usually means ``time_delta`` is too large for the one-transition-per-step
    approximation.
    """


class NonFiniteStateError(StateTransitionError, FloatingPointError):
    """The ODE state became NaN or infinite."""


class NonFiniteObjectiveError(StateTransitionError, ValueError):
    """The objective is not finite on the initial simplex."""


class ParseError(StateTransitionError, ValueError):
    """Syntax error in a rate expression or model file.

    ``line`` and ``column`` are 1-based.
    """

    def __init__(self, message, line=1, column=1, expected=()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        text = f"line {line}, column {column}: {message}"
        if self.expected:
            text += f" (expected one of: {', '.join(self.expected)})"
        super().__init__(text)


class UnknownIdentifierError(StateTransitionError, ValueError):
    """An identifier does not resolve to a parameter, compartment or array."""

    def __init__(self, name, line=None, column=None):
        self.name = name
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}, column {column}: "
        super().__init__(f"{where}unknown identifier '{name}'")


class EvalError(StateTransitionError, ValueError):
    """A rate expression could not be evaluated to a finite vector."""
