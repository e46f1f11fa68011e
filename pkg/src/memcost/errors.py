"""Exception hierarchy shared across the package."""
from __future__ import annotations

__all__ = [
    "MemcostError",
    "InvalidInputError",
    "ConfigurationError",
    "DuplicateRecordError",
    "BackendError",
    "TransientBackendError",
    "ExtractionError",
]


class MemcostError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MemcostError):
    """A caller-supplied value violates an operation's contract."""


class ConfigurationError(MemcostError):
    """Configuration is missing, malformed, or inconsistent with the runtime."""


class DuplicateRecordError(MemcostError):
    """An id that must be unique within a store was inserted twice."""


class BackendError(MemcostError):
    """A backend call failed for good (non-transient error or retries exhausted).

    ``attempts`` counts calls actually made; ``attempt_log`` holds one line per
    failed attempt so operators can see what happened without re-running.
    """

    def __init__(self, message: str, *, attempts: int = 1, attempt_log: tuple[str, ...] = ()):
        super().__init__(message)
        self.attempts = attempts
        self.attempt_log = attempt_log


class TransientBackendError(MemcostError):
    """A retryable backend failure: HTTP 429/500/502/503 or a timeout.

    ``usage`` optionally carries tokens billed by the failed attempt so the
    caller's ledger can stay exact (providers charge for processed prompts
    even when the call ultimately errors).
    """

    def __init__(self, message: str, *, status: int | None = None, usage: object | None = None):
        super().__init__(message)
        self.status = status
        self.usage = usage


class ExtractionError(MemcostError):
    """Fact extraction failed for one segment; carries the segment's seq_no."""

    def __init__(self, message: str, *, seq_no: int):
        super().__init__(message)
        self.seq_no = seq_no
