"""Exception types raised across the package."""

from __future__ import annotations


class GinoLabError(Exception):
    """Base class for all package errors."""


class InvalidResolution(GinoLabError, ValueError):
    pass


class InvalidResolutionPair(GinoLabError, ValueError):
    pass


class InvalidMetric(GinoLabError, ValueError):
    pass


class NonHermitianInput(GinoLabError, ValueError):
    """Spectrum does not correspond to a real field."""


class DegenerateReference(GinoLabError, ValueError):
    """Reference field has zero norm, so relative metrics are undefined."""


class EmptyBand(GinoLabError, ValueError):
    """No wavenumber satisfies the forcing cutoff."""


class CacheMismatch(GinoLabError, ValueError):
    """A backward pass received a cache from a different model layout."""


class ShapeMismatch(GinoLabError, ValueError):
    pass


class DivergenceDetected(GinoLabError, RuntimeError):
    """Training loss became non-finite.

    The partial metric history recorded before the failure is kept on
    ``history`` so callers can still inspect it.
    """

    def __init__(self, message, history=None, step=None):
        super().__init__(message)
        self.history = history
        self.step = step


class BoundViolation(GinoLabError, AssertionError):
    """A numerical inequality that must hold was violated."""

    def __init__(self, message, lemma=None, sample=None):
        super().__init__(message)
        self.lemma = lemma
        self.sample = sample


class CorruptFile(GinoLabError, IOError):
    """Binary field file failed validation."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
