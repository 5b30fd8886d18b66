"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`MixallocError`;
the CLI maps the subclasses onto stable exit codes.
"""


class MixallocError(Exception):
    """Base class for all library errors."""


class ValidationError(MixallocError, ValueError):
    """Input violates a documented invariant."""


class DimensionError(ValidationError):
    """Vector or configuration lengths do not match."""


class DomainError(ValidationError):
    """Argument outside the valid domain of a function."""


class EmptyInputError(ValidationError):
    """An operation needed at least one element."""


class ParseError(ValidationError):
    """A document could not be parsed.

    ``line`` and ``field`` are filled in when known.
    """

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.field = field


class CalibrationError(MixallocError):
    """Synthetic workload cannot reproduce the requested profiles."""


class DegenerateProfileError(MixallocError):
    """Too few distinct points to fit a cubic profile."""


class FeasibilityError(MixallocError):
    """Allocation problem has no feasible point."""

    def __init__(self, verdict, message=None):
        super().__init__(message or f"allocation infeasible: {verdict.value}")
        self.verdict = verdict


class ConvergenceError(MixallocError):
    """The solver did not reach a KKT point from any start."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class CapacityError(MixallocError):
    """Exhaustive search would exceed its size limit."""


class LookupTableError(MixallocError):
    """Lookup table cannot be built or queried."""


class NoFittingModelError(LookupTableError):
    """No stored model fits in the granted memory."""
