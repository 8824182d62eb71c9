"""Exception hierarchy shared by all modules.

Domain errors signal invalid values or usage (CLI exit code 1); format
errors signal malformed files (CLI exit code 2).
"""

from __future__ import annotations


class DepthPriorError(Exception):
    """Base class for all toolkit errors."""


class DomainError(DepthPriorError):
    """A value or argument violates an invariant (bad score range, empty batch, ...)."""


class FormatError(DepthPriorError):
    """A file does not conform to its declared format."""

    def __init__(self, message: str, *, offset: int | None = None, line: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class KeyLookupError(DomainError):
    """A referenced key (image id, reference threshold) is not present."""
