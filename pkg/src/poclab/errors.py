"""Exception hierarchy shared by every poclab module."""

from __future__ import annotations


class PocError(Exception):
    """Base class for all poclab errors."""


class DomainError(PocError, ValueError):
    """An argument lies outside the domain of an operation."""


class TruncationError(PocError):
    """A computation needs sites that lie outside the finite window."""

    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class BadBoxError(PocError, ValueError):
    """A site set is not a time box; ``witness`` lies in both its past and future."""

    def __init__(self, message: str, witness=None):
        super().__init__(message)
        self.witness = witness


class GeometryError(PocError, ValueError):
    """An explicit site space violates the poset hypotheses (cycles, redundant edges)."""


class MissingBoundaryError(PocError, KeyError):
    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class EnumerationTooLarge(PocError):
    def __init__(self, message: str, size: int):
        super().__init__(message)
        self.size = size


class SingularityError(PocError, ZeroDivisionError):
    """A normalising constant vanished (non-nullness violated)."""


class MonotonicityError(PocError):
    """The kernel failed the monotonicity audit required for coupled sampling."""

    def __init__(self, message: str, counterexample=None):
        super().__init__(message)
        self.counterexample = counterexample


class UnsupportedError(PocError):
    pass


class LoadError(PocError, ValueError):
    """A model or site-space file failed validation."""
