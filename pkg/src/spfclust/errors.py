"""Exception hierarchy shared by all modules."""


class SpfclustError(Exception):
    """Base class for all package errors."""


class ValidationError(SpfclustError, ValueError):
    """Inputs are structurally inconsistent (misaligned ids, bad ranges)."""


class ParseError(ValidationError):
    """A row of an input file could not be parsed."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ConflictError(ValidationError):
    """Duplicate (site, date) observation."""


class CoverageError(ValidationError):
    """A day of year has no usable value across all years."""


class ConfigError(ValidationError):
    """Bad configuration key or value."""


class DomainError(ValidationError):
    """Evaluation point outside the basis domain."""


class DegenerateBasisError(SpfclustError):
    """Basis matrix is not of full column rank."""


class ConditioningError(SpfclustError, ArithmeticError):
    """A linear system is numerically singular."""


class NumericalError(SpfclustError, ArithmeticError):
    """Non-finite objective or invalid covariance encountered."""


class EmptyClusterError(SpfclustError):
    """A cluster has no members when parameters must be estimated."""

    def __init__(self, cluster):
        self.cluster = cluster
        super().__init__(f"cluster {cluster} is empty")
