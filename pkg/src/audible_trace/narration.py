"""Narration text rendering and prosody planning.

Turns a classified exception event into the sentence a listener hears and
the prosody plan a speech backend consumes: severity-mapped pitch and rate,
chunked delivery with fixed pauses, and a reading-support mode that slows
to per-word pacing with simplified phrasing.
"""
from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import PurePath

from .errors import ConfigError
from .taxonomy import Classification, Severity
from .traceparse import ExceptionEvent

logger = logging.getLogger(__name__)


class NarrationMode(str, Enum):
    STANDARD = "standard"
    DYSLEXIA = "dyslexia"


@dataclass
class Chunk:
    text: str
    pause_after_ms: int
    pitch_shift_cents: int
    rate_multiplier: float


@dataclass
class NarrationPlan:
    chunks: list[Chunk]
    severity: Severity
    event_id: int
    estimated_duration_ms: int
    base_rate_wpm: int
    alert_tone_ms: int = 0

    @property
    def text(self) -> str:
        return " ".join(chunk.text for chunk in self.chunks)


# Severity -> (pitch shift in cents, rate multiplier).
PROSODY = {
    Severity.CRITICAL: (150, 1.25),
    Severity.HIGH: (75, 1.10),
    Severity.WARNING: (0, 1.00),
    Severity.INFO: (-50, 0.85),
}

INTER_CHUNK_PAUSE_MS = 300
DYSLEXIA_PAUSE_MS = 500
DYSLEXIA_RATE_WPM = 120
CRITICAL_ALERT_MS = 300
CRITICAL_PREFIX = "Immediate attention needed: "

DEFAULT_TEMPLATE = "{exc_type}: {details} in {filename} line {lineno}"
LEGACY_DEFAULT_TEMPLATE = "{exc_type} occurred: {details}"

DEFAULT_TEMPLATES = {
    "SyntaxError": "Syntax violation in {filename} line {lineno}: {details}",
    "TypeError": "Type mismatch: {details}",
    "KeyError": "{exc_type}: {details} key missing in dictionary at {filename} line {lineno}",
    # Kept for fidelity with the original template table; the active
    # critical-alert mechanism is the severity prefix below.
    "Critical": "Immediate attention needed: {exc_type} - {details}",
}

DEFAULT_SEVERITY_PREFIX = {Severity.CRITICAL: CRITICAL_PREFIX}

ALLOWED_PLACEHOLDERS = {"exc_type", "details", "filename", "lineno", "key"}

# (exception type, exact message) -> plain-language replacement, applied in
# reading-support mode only. The replacement supplants the whole message.
SIMPLIFICATIONS = {
    ("TypeError", "unsupported operand type(s) for +: 'int' and 'str'"): "Cannot add text to number",
    ("TypeError", "unsupported operand type(s) for +: 'str' and 'int'"): "Cannot add text to number",
}

# Recurrence advice by exception type; unknown types get the generic sentence.
ADVICE = {
    "KeyError": "consider using dict.get() for safe access",
    "AttributeError": "consider checking the object with hasattr() first",
    "IndexError": "consider checking the sequence length before indexing",
    "FileNotFoundError": "consider verifying the path with os.path.exists() first",
    "ZeroDivisionError": "consider guarding the divisor against zero",
}
GENERIC_SUGGESTION = "Recurring error: Consider adding try-except block"

_ORDINAL_WORDS = [
    "first", "second", "third", "fourth", "fifth", "sixth",
    "seventh", "eighth", "ninth", "tenth", "eleventh", "twelfth",
]

_AT_HEX_RE = re.compile(r" at 0x[0-9a-fA-F]+")
_BARE_HEX_RE = re.compile(r"0x[0-9a-fA-F]+")


@dataclass
class TemplateSet:
    templates: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    default_template: str = DEFAULT_TEMPLATE
    severity_prefix: dict[Severity, str] = field(
        default_factory=lambda: dict(DEFAULT_SEVERITY_PREFIX)
    )
    simplifications: dict[tuple[str, str], str] = field(
        default_factory=lambda: dict(SIMPLIFICATIONS)
    )

    def __post_init__(self) -> None:
        for name, template in list(self.templates.items()) + [
            ("<default>", self.default_template)
        ]:
            _validate_template(name, template)

    def lookup(self, exception_type: str) -> str:
        return self.templates.get(exception_type, self.default_template)


def make_template_set(
    overrides: dict[str, str] | None = None,
    *,
    legacy_fallback: bool = False,
    simplifications: dict | None = None,
) -> TemplateSet:
    """The shipped templates plus user overrides.

    legacy_fallback swaps the location-bearing default for the bare
    "{exc_type} occurred: {details}" form kept for compatibility.
    """
    templates = dict(DEFAULT_TEMPLATES)
    default = LEGACY_DEFAULT_TEMPLATE if legacy_fallback else DEFAULT_TEMPLATE
    if overrides:
        if not isinstance(overrides, dict):
            raise ConfigError("template overrides must be a mapping")
        for name, template in overrides.items():
            if not isinstance(name, str) or not isinstance(template, str):
                raise ConfigError("template overrides must map names to strings")
            if name == "default":
                default = template
            else:
                templates[name] = template
    simp = dict(SIMPLIFICATIONS)
    if simplifications:
        for key, value in simplifications.items():
            simp[key] = value
    return TemplateSet(templates=templates, default_template=default, simplifications=simp)


def _validate_template(name: str, template: str) -> None:
    try:
        fields = [f for _, f, _, _ in string.Formatter().parse(template) if f is not None]
    except ValueError as exc:
        raise ConfigError(f"template for {name!r} is malformed: {exc}") from None
    unknown = set(fields) - ALLOWED_PLACEHOLDERS
    if unknown:
        raise ConfigError(f"template for {name!r} uses unknown placeholders: {sorted(unknown)}")


def strip_memory_addresses(text: str) -> str:
    """Remove hex memory addresses, looping to a fixpoint so the result
    never contains an 0x-hex run and a second pass changes nothing."""
    while True:
        cleaned = _AT_HEX_RE.sub("", text)
        cleaned = _BARE_HEX_RE.sub("", cleaned)
        if cleaned == text:
            return cleaned
        text = cleaned


def _speech_location(event: ExceptionEvent) -> tuple[str, int]:
    frame = event.innermost
    if frame is None:
        return "<unknown>", 0
    return PurePath(frame.file).name, frame.line


def render_message(
    event: ExceptionEvent,
    classification: Classification,
    mode: NarrationMode = NarrationMode.STANDARD,
    templates: TemplateSet | None = None,
) -> str:
    """The sentence to speak for one event.

    Standard mode formats the type's template; reading-support mode first
    consults the simplification table and, on a hit, speaks the replacement
    phrase instead of the raw message. Critical severity prepends the
    attention prefix; memory addresses never survive to output.
    """
    templates = templates if templates is not None else TemplateSet()
    filename, lineno = _speech_location(event)
    details = event.message

    simplified: str | None = None
    if mode is NarrationMode.DYSLEXIA:
        simplified = templates.simplifications.get((event.exception_type, details))

    if simplified is not None:
        text = simplified
    else:
        template = templates.lookup(event.exception_type)
        text = template.format(
            exc_type=event.exception_type,
            details=details,
            filename=filename,
            lineno=lineno,
            key=details,
        )

    prefix = templates.severity_prefix.get(classification.severity, "")
    return strip_memory_addresses(prefix + text)


_CHUNK_SPLIT_RE = re.compile(r"(?<=[.!?:]) +|(?<= -) +")


def _split_chunks(text: str) -> list[str]:
    """Split at sentence enders, ": ", and " - ", separators staying left,
    so a single-space join reproduces the input exactly."""
    normalized = " ".join(text.split())
    if not normalized:
        return []
    return [piece for piece in _CHUNK_SPLIT_RE.split(normalized) if piece]


def plan_prosody(
    text: str,
    classification: Classification,
    mode: NarrationMode = NarrationMode.STANDARD,
    base_rate_wpm: int = 160,
    *,
    event_id: int = 0,
) -> NarrationPlan:
    """Chunk a rendered message and attach pitch/rate/pause values.

    Standard mode applies the severity's pitch shift and rate multiplier
    with fixed inter-chunk pauses. Reading-support mode emits one chunk per
    word at a flat 120 effective wpm, longer pauses, no pitch shift.
    """
    if not text or not text.strip():
        raise ValueError("cannot plan prosody for empty text")
    if base_rate_wpm <= 0:
        raise ValueError("base_rate_wpm must be positive")

    severity = classification.severity
    if mode is NarrationMode.DYSLEXIA:
        pieces = text.split()
        pitch, rate = 0, DYSLEXIA_RATE_WPM / base_rate_wpm
        pause = DYSLEXIA_PAUSE_MS
    else:
        pieces = _split_chunks(text)
        pitch, rate = PROSODY[severity]
        pause = INTER_CHUNK_PAUSE_MS

    chunks = [
        Chunk(
            text=piece,
            pause_after_ms=pause if i < len(pieces) - 1 else 0,
            pitch_shift_cents=pitch,
            rate_multiplier=rate,
        )
        for i, piece in enumerate(pieces)
    ]

    effective_wpm = base_rate_wpm * rate
    ms_per_word = 60_000 / effective_wpm
    duration = sum(
        len(chunk.text.split()) * ms_per_word + chunk.pause_after_ms for chunk in chunks
    )
    return NarrationPlan(
        chunks=chunks,
        severity=severity,
        event_id=event_id,
        estimated_duration_ms=int(round(duration)),
        base_rate_wpm=base_rate_wpm,
        alert_tone_ms=CRITICAL_ALERT_MS if severity is Severity.CRITICAL else 0,
    )


def ordinal(n: int) -> str:
    """1 -> "first" ... 12 -> "twelfth", then numeric suffix forms."""
    if 1 <= n <= len(_ORDINAL_WORDS):
        return _ORDINAL_WORDS[n - 1]
    if n % 100 in (11, 12, 13):
        return f"{n}th"
    suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


def render_suggestion(exception_type: str, count: int, window_label: str = "hour") -> str:
    """The recurring-error sentence for a signature that tripped the window.

    Known types get targeted advice; the rest get the generic recommendation.
    """
    advice = ADVICE.get(exception_type)
    if advice is None:
        return GENERIC_SUGGESTION
    return f"This is the {ordinal(count)} {exception_type} this {window_label} - {advice}"
