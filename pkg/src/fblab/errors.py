"""Exception hierarchy shared by all fblab modules."""


class FblabError(Exception):
    """Base class for every error raised by fblab."""


class ArgumentError(FblabError, ValueError):
    """A precondition on the arguments of an operation was violated."""


class DomainError(ArgumentError):
    """A point lies outside the domain where a function is defined."""


class EmptyResultError(ArgumentError):
    """A window or selection produced no data."""


class NumericError(FblabError, ArithmeticError):
    """A numerical procedure failed (non-convergence, non-finite values).

    ``diagnostics`` carries whatever the failing routine knew at the time,
    e.g. residual histories or sampled function values.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics if diagnostics is not None else {}


class BracketError(NumericError):
    """No sign change was found while bracketing a root."""


class MatchingError(NumericError):
    """The zero-matching function never changed sign on the search grid."""


class ConstructionError(NumericError):
    """A derived object failed its own consistency checks."""


class SpecError(ArgumentError):
    """A problem specification is inconsistent (e.g. non-elliptic coefficients)."""


class GraphViolationError(FblabError, ValueError):
    """The zero set is not a graph over the x' variables."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class TransformError(FblabError, ValueError):
    """The hodograph transform is not defined on the requested patch."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class CertificateNotApplicable(ArgumentError):
    """A certificate was requested outside the regime where it makes sense."""


class ConfigError(FblabError, ValueError):
    """One or more problems in an experiment configuration."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
