"""Exception hierarchy shared across the package."""


class CookieWalkError(Exception):
    """Base class for all library errors."""


class DomainError(CookieWalkError, ValueError):
    """An argument lies outside the domain of an operation."""


class ConvergenceError(CookieWalkError):
    """An iterative computation stopped before reaching its target.

    ``best`` carries the best value reached (a tail bound, a remaining mass).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UnsupportedCapability(CookieWalkError):
    """The environment does not provide what the operation needs."""


class ConsistencyError(CookieWalkError):
    """Two routes to the same quantity disagree beyond rounding."""


class DegenerateVarianceError(CookieWalkError):
    pass


class ResourceLimitError(CookieWalkError):
    """A configured memory or work cap was exceeded."""

    def __init__(self, message, cap=None):
        super().__init__(message)
        self.cap = cap


class SpecParseError(CookieWalkError, ValueError):
    """A key-value document could not be parsed or validated."""

    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key
