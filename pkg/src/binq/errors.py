"""Exception types shared across the package."""


class BinqError(Exception):
    """Base class for all package-specific errors."""


class FormatError(BinqError):
    """A file or byte stream does not conform to the expected layout."""


class TruncationError(FormatError):
    """A payload ended before the declared amount of data could be read."""


class IoError(BinqError):
    """An underlying filesystem operation failed."""


class DomainError(BinqError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(BinqError):
    """Structured data violates a documented invariant."""


class OptimizationError(BinqError):
    """A numerical search encountered values it cannot work with."""
