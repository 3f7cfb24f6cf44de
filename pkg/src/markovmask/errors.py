"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 2),
numerical breakdowns from :class:`NumericalError` (CLI exit code 3).
"""


class MarkovMaskError(Exception):
    """Base class for all package errors."""


class ValidationError(MarkovMaskError, ValueError):
    """Input does not satisfy a documented precondition."""


class NumericalError(MarkovMaskError, ArithmeticError):
    """A computation could not be completed to the required accuracy."""


class NonSquare(ValidationError):
    def __init__(self, shape):
        super().__init__(f"transition matrix must be square, got shape {shape}")
        self.shape = shape


class NonFinite(ValidationError):
    pass


class NegativeEntry(ValidationError):
    def __init__(self, i, j, value):
        super().__init__(f"entry ({i}, {j}) = {value!r} is negative")
        self.i, self.j, self.value = i, j, value


class EntryAboveOne(ValidationError):
    def __init__(self, i, j, value):
        super().__init__(f"entry ({i}, {j}) = {value!r} exceeds 1")
        self.i, self.j, self.value = i, j, value


class NonStochastic(ValidationError):
    def __init__(self, column, deviation):
        super().__init__(
            f"column {column} sums to 1 {deviation:+.3g}; not stochastic")
        self.column, self.deviation = column, deviation


class BadLabels(ValidationError):
    pass


class BadDistribution(ValidationError):
    pass


class SizeLimitExceeded(ValidationError):
    pass


class UnknownState(ValidationError, KeyError):
    def __init__(self, state):
        super().__init__(f"unknown state {state!r}")
        self.state = state

    def __str__(self):
        return self.args[0]


class UnknownClass(ValidationError):
    pass


class NoTransientStates(ValidationError):
    def __init__(self, msg="chain has no transient states"):
        super().__init__(msg)


class NotAbsorbing(ValidationError):
    pass


class NotComposite(ValidationError):
    pass


class MissingDistance(ValidationError):
    def __init__(self, i, j):
        super().__init__(f"no distance given for transition {j} -> {i}")
        self.i, self.j = i, j


class ZeroConditionViolated(ValidationError):
    """Mask weights an ergodic-to-ergodic transition; the cumulative
    expectation would be infinite."""

    def __init__(self, i, j, weight):
        super().__init__(
            f"mask weight {weight!r} on ergodic transition {j} -> {i}; "
            "cumulative expectation diverges")
        self.i, self.j, self.weight = i, j, weight


class ChainMismatch(ValidationError):
    pass


class TimeAverageOnly(ValidationError):
    pass


class InvalidBoard(ValidationError):
    pass


class SchemaError(ValidationError):
    def __init__(self, message, *, field=None, line=None, path=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.field, self.line, self.path = field, line, path


class ExcessiveTruncation(NumericalError):
    def __init__(self, truncations, n_paths, max_steps):
        super().__init__(
            f"{truncations} of {n_paths} paths hit max_steps={max_steps}")
        self.truncations, self.n_paths, self.max_steps = (
            truncations, n_paths, max_steps)


class SingularSystem(NumericalError):
    pass


class ResidualTooLarge(NumericalError):
    pass


class StationaryFailure(NumericalError):
    pass


class ClassificationError(NumericalError):
    """A class labelled transient keeps all of its probability mass."""
