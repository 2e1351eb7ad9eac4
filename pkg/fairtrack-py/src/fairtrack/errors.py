"""Exception tree for the fairtrack library.

Every error the library raises derives from :class:`FairtrackError`, so callers
can catch the whole family with one ``except`` clause.
"""

from __future__ import annotations

from typing import Any


class FairtrackError(Exception):
    """Base class for all library-raised errors."""


class ConfigurationError(FairtrackError):
    """Configuration is invalid or references something that does not exist."""

    def __init__(self, message: str, field: str | None = None) -> None:
        super().__init__(message)
        self.field = field


class DataValidationError(FairtrackError):
    """Data violates a dataset invariant."""


class DimensionMismatchError(FairtrackError, ValueError):
    """Input width disagrees with the model's input dimension."""


class DegenerateGroupError(FairtrackError):
    """A demographic group or conditioning set is empty where it must be populated."""


class EmptyFederationError(FairtrackError):
    """Partitioning left no client with enough data."""


class UnsupportedKernelError(FairtrackError):
    """Kernel does not satisfy the premise of the requested operation."""


class CheckpointError(FairtrackError):
    """Model checkpoint blob is malformed."""


class RoundFailedError(FairtrackError):
    """A communication round failed; records completed before the failure are kept."""

    def __init__(self, message: str, partial_records: list[Any] | None = None) -> None:
        super().__init__(message)
        self.partial_records = partial_records if partial_records is not None else []
