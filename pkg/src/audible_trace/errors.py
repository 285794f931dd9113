"""Exception types shared across the audible-trace modules.

Every failure the package raises deliberately derives from AudibleTraceError
so callers can catch the whole family at the CLI boundary.
"""
from __future__ import annotations


class AudibleTraceError(Exception):
    """Base class for all errors raised by this package."""


class NoTracebackFound(AudibleTraceError):
    """The given text matches no traceback grammar."""


class SchemaViolation(AudibleTraceError):
    """A structured event payload is malformed or has the wrong version."""


class ConfigError(AudibleTraceError):
    """A config file, taxonomy override, or template set is invalid."""


class GatewayClosed(AudibleTraceError):
    """A plan was submitted to a speech gateway that has shut down."""


class BackendFailure(AudibleTraceError):
    """A speech backend could not emit an utterance."""


class NoData(AudibleTraceError):
    """A report was requested before any data existed to report on."""


class StorageFailure(AudibleTraceError):
    """The ledger file could not be read or replayed."""


class NotFound(AudibleTraceError):
    """A record id does not exist in the ledger."""


class SpawnFailure(AudibleTraceError):
    """The supervised child command could not be started."""


class FileUnreadable(AudibleTraceError):
    """A session file given to replay cannot be read."""


class PortBusy(AudibleTraceError):
    """The dashboard port is already in use."""
