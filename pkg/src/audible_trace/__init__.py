"""Spoken error reporting for terminal programs.

Wraps a child process (or ingests event streams), turns unhandled exceptions
into classified, prosody-annotated speech, and keeps a queryable JSON-lines
ledger with an optional live dashboard.
"""
from __future__ import annotations

from .errors import (
    AudibleTraceError,
    BackendFailure,
    ConfigError,
    FileUnreadable,
    GatewayClosed,
    NoData,
    NoTracebackFound,
    NotFound,
    PortBusy,
    SchemaViolation,
    SpawnFailure,
    StorageFailure,
)
from .gateway import Backend, BackendKind, SpeechGateway, UtteranceStatus
from .ledger import ErrorLedger, LedgerRecord, gen_doc_url, signature_of
from .narration import (
    NarrationMode,
    NarrationPlan,
    TemplateSet,
    plan_prosody,
    render_message,
    render_suggestion,
)
from .pipeline import EventBus, Pipeline
from .taxonomy import Classification, Family, Severity, classify, load_taxonomy
from .traceparse import (
    BoundaryDetector,
    ExceptionEvent,
    StackFrame,
    TracebackSpan,
    detect_boundaries,
    extract_context,
    parse_structured,
    parse_traceback,
)

__version__ = "0.1.0"

__all__ = [
    "AudibleTraceError",
    "Backend",
    "BackendFailure",
    "BackendKind",
    "BoundaryDetector",
    "Classification",
    "ConfigError",
    "ErrorLedger",
    "EventBus",
    "ExceptionEvent",
    "Family",
    "FileUnreadable",
    "GatewayClosed",
    "LedgerRecord",
    "NarrationMode",
    "NarrationPlan",
    "NoData",
    "NoTracebackFound",
    "NotFound",
    "Pipeline",
    "PortBusy",
    "SchemaViolation",
    "Severity",
    "SpawnFailure",
    "SpeechGateway",
    "StackFrame",
    "StorageFailure",
    "TemplateSet",
    "TracebackSpan",
    "UtteranceStatus",
    "classify",
    "detect_boundaries",
    "extract_context",
    "gen_doc_url",
    "load_taxonomy",
    "parse_structured",
    "parse_traceback",
    "plan_prosody",
    "render_message",
    "render_suggestion",
    "signature_of",
    "__version__",
]
