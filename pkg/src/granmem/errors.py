"""Exception types shared across the memory engine."""

from __future__ import annotations


class GranmemError(Exception):
    """Base class for all engine errors."""


class EmptyInput(GranmemError):
    """An operation received an empty session or empty text."""


class ParameterError(GranmemError):
    """A numeric argument is outside its documented range."""


class ProviderError(GranmemError):
    """A remote provider failed after exhausting its retry budget."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class EmptyGeneration(GranmemError):
    """A generation provider returned no usable content."""


class DimensionError(GranmemError):
    """Embedding dimensions do not match."""


class DegenerateVector(GranmemError):
    """A text embedded to the zero vector, or a zero-norm vector was used."""


class DegenerateScores(GranmemError):
    """All similarity scores are identical; a two-component fit is undefined."""


class EmptyBank(GranmemError):
    """The memory bank holds no units."""


class DuplicateSession(GranmemError):
    """A session id is already present in the memory bank."""


class FormatError(GranmemError):
    """An input file violates its documented schema.

    ``location`` pinpoints the offending record index or line number.
    """

    def __init__(self, message: str, location: str | None = None):
        super().__init__(message if location is None else f"{message} ({location})")
        self.location = location


class IoError(GranmemError):
    """A filesystem operation failed; the message names the path."""


class VersionError(GranmemError):
    """A snapshot was written by an incompatible format version."""


class CorruptSnapshot(GranmemError):
    """A loaded snapshot violates a memory-bank invariant."""


class ConfigError(GranmemError):
    """Application configuration is invalid."""
