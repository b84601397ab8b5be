"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: argument errors are 2 (argparse),
input-side errors (subclasses of InputError) are 3, backend-side errors
(subclasses of BackendError) are 4.
"""

from __future__ import annotations


class PassageLabError(Exception):
    """Base class for all package errors."""


class InputError(PassageLabError):
    """A problem with user-supplied data or files."""


class ParseError(InputError):
    """Malformed input document."""

    def __init__(self, message: str, byte_offset: int | None = None):
        super().__init__(message)
        self.byte_offset = byte_offset


class FieldError(InputError):
    """A required field is missing or invalid, located by instance index."""

    def __init__(self, instance_index: int, field: str, message: str | None = None):
        self.instance_index = instance_index
        self.field = field
        super().__init__(
            message or f"instance {instance_index}: missing or invalid field {field!r}"
        )


class ConsistencyError(InputError):
    """Inputs that must agree with each other do not."""


class InsufficientCorpusError(InputError):
    """The corpus is too small to satisfy a sampling request."""


class IndexBuildError(InputError):
    """The lexical index could not be built."""


class UndefinedRatioError(InputError):
    """A ratio whose denominator is empty."""


class BackendError(PassageLabError):
    """A problem with a reader or judge backend."""


class TransportError(BackendError):
    """The backend could not be reached; safe to retry."""

    retryable = True


class CacheMissError(BackendError):
    """A replay-only backend has no entry for the requested key."""

    def __init__(self, key_hash: str):
        self.key_hash = key_hash
        super().__init__(f"replay cache has no entry for key {key_hash}")


class ProtocolError(BackendError):
    """The backend replied with something the wire protocol does not allow."""


class CapabilityError(BackendError):
    """The backend does not support a requested capability."""
