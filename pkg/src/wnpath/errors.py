"""Exception types shared by the engines and the command line."""

__all__ = ["DomainError", "ToleranceError"]


class DomainError(ValueError):
    """Arguments outside the mathematical domain of an operation."""


class ToleranceError(RuntimeError):
    """A requested accuracy could not be certified."""
