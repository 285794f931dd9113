"""Traceback text parsing and stream boundary detection.

Converts raw interpreter error output (and structured hook payloads) into
validated ExceptionEvent values. The boundary detector is a line-oriented
state machine that finds complete traceback blocks inside an interleaved
byte stream; it is chunking-invariant because every decision is made on
complete lines plus an explicit end-of-stream flush.
"""
from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import NoTracebackFound, SchemaViolation
from .timefmt import now_ms, parse_iso_ms

logger = logging.getLogger(__name__)

HEADER_LINE = "Traceback (most recent call last):"
CHAIN_SEPARATORS = (
    "During handling of the above exception, another exception occurred:",
    "The above exception was the direct cause of the following exception:",
)

# Frame records are indented exactly two spaces by the stock renderer.
_FRAME_RE = re.compile(r'^  File "(?P<file>.+)", line (?P<line>\d+), in (?P<func>.+?)\s*$')
# Syntax-error location records carry no ", in <name>" part.
_SYNTAX_FILE_RE = re.compile(r'^  File "(?P<file>.+)", line (?P<line>\d+)\s*$')
# Final line: "Type" or "Type: message", optionally dotted for non-builtins.
_TERMINAL_RE = re.compile(
    r"^(?P<type>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)"
    r"(?P<colon>:(?: (?P<msg>.*))?)?$"
)
# Caret/tilde position markers under a source echo; never source text.
_MARKER_RE = re.compile(r"^\s*[~^\s]+$")

SYNTAX_LOOKAHEAD_LINES = 4


class ParseSource(str, Enum):
    PARSED_TEXT = "parsed_text"
    STRUCTURED_HOOK = "structured_hook"


@dataclass
class StackFrame:
    file: str
    line: int
    function: str
    code_line: str | None = None

    def as_dict(self) -> dict:
        return {
            "file": self.file,
            "line": self.line,
            "function": self.function,
            "code_line": self.code_line,
        }


@dataclass
class ExceptionEvent:
    exception_type: str
    message: str
    frames: list[StackFrame]
    cause_chain: list[ExceptionEvent] = field(default_factory=list)
    base_classes: list[str] | None = None
    source: ParseSource = ParseSource.PARSED_TEXT
    captured_at: int = 0
    event_id: int = 0
    thread: str | None = None
    parse_warnings: list[str] = field(default_factory=list)

    @property
    def innermost(self) -> StackFrame | None:
        return self.frames[-1] if self.frames else None

    @property
    def frame_count(self) -> int:
        return len(self.frames)


@dataclass
class TracebackSpan:
    start_offset: int
    end_offset: int
    text: bytes

    def __post_init__(self) -> None:
        if self.start_offset >= self.end_offset:
            raise ValueError("span must cover at least one byte")


@dataclass
class ContextSnippet:
    lines: list[tuple[int, str]]
    error_line: int
    reason: str | None = None


def _is_terminal(line: str) -> re.Match | None:
    if line != HEADER_LINE and line not in CHAIN_SEPARATORS:
        return _TERMINAL_RE.match(line)
    return None


def _is_headerless_terminal(line: str) -> bool:
    """Terminal acceptable for a headerless block: identifier ending in
    "Error" or "Warning" followed by a colon."""
    m = _is_terminal(line)
    if m is None or m.group("colon") is None:
        return False
    return m.group("type").endswith(("Error", "Warning"))


class _State(Enum):
    IDLE = "idle"
    IN_BLOCK = "in_block"
    HEADERLESS = "headerless"
    AFTER_TERMINAL = "after_terminal"
    AFTER_TERMINAL_BLANK = "after_terminal_blank"
    CHAIN_SEP = "chain_sep"
    CHAIN_SEP_BLANK = "chain_sep_blank"


class BoundaryDetector:
    """Incremental traceback-block finder over a byte stream.

    feed() accepts arbitrary chunks and returns the spans completed so far;
    finish() flushes a trailing block that ends at end-of-stream. Offsets are
    byte offsets into the whole stream; span text reproduces the stream bytes
    between them exactly.
    """

    def __init__(self) -> None:
        self._offset = 0
        self._partial = b""
        self._state = _State.IDLE
        self._block_start = 0
        self._block_end = 0
        self._block_bytes = bytearray()
        # Bytes seen after the last terminal; appended to the block only if
        # a chain separator proves the block continues.
        self._pending_bytes = bytearray()
        self._headerless_budget = 0

    def feed(self, chunk: bytes) -> list[TracebackSpan]:
        spans: list[TracebackSpan] = []
        data = self._partial + chunk
        self._partial = b""
        start = 0
        while True:
            nl = data.find(b"\n", start)
            if nl < 0:
                self._partial = data[start:]
                break
            line = data[start : nl + 1]
            self._handle_line(line, spans)
            start = nl + 1
        return spans

    def finish(self) -> list[TracebackSpan]:
        spans: list[TracebackSpan] = []
        if self._partial:
            line = self._partial
            self._partial = b""
            self._handle_line(line, spans)
        if self._state in (
            _State.AFTER_TERMINAL,
            _State.AFTER_TERMINAL_BLANK,
            _State.CHAIN_SEP,
            _State.CHAIN_SEP_BLANK,
        ):
            self._emit(spans)
        self._reset()
        return spans

    def _reset(self) -> None:
        self._state = _State.IDLE
        self._block_bytes = bytearray()
        self._pending_bytes = bytearray()

    def _emit(self, spans: list[TracebackSpan]) -> None:
        spans.append(
            TracebackSpan(self._block_start, self._block_end, bytes(self._block_bytes))
        )
        self._reset()

    def _handle_line(self, raw: bytes, spans: list[TracebackSpan]) -> None:
        queue: deque[bytes] = deque([raw])
        while queue:
            self._step(queue.popleft(), spans, queue)

    def _step(self, raw: bytes, spans: list[TracebackSpan], queue: deque[bytes]) -> None:
        offset = self._offset
        self._offset += len(raw)
        text = raw.decode("utf-8", errors="replace").rstrip("\r\n")

        if self._state is _State.IDLE:
            if text == HEADER_LINE:
                self._begin(offset, raw)
            elif _SYNTAX_FILE_RE.match(text) and not _FRAME_RE.match(text):
                self._begin(offset, raw)
                self._state = _State.HEADERLESS
                self._headerless_budget = SYNTAX_LOOKAHEAD_LINES
            return

        if self._state is _State.HEADERLESS:
            self._block_bytes += raw
            if _is_headerless_terminal(text):
                self._block_end = offset + len(raw)
                self._state = _State.AFTER_TERMINAL
                return
            self._headerless_budget -= 1
            if self._headerless_budget <= 0 or text == HEADER_LINE:
                # Not a syntax block after all; replay everything but the
                # first line so nested starts are not missed.
                self._requeue_block(queue, offset + len(raw))
            return

        if self._state is _State.IN_BLOCK:
            self._block_bytes += raw
            if text == HEADER_LINE:
                return
            if text.startswith((" ", "\t")) or text == "":
                return
            m = _is_terminal(text)
            if m is not None:
                self._block_end = offset + len(raw)
                self._state = _State.AFTER_TERMINAL
                return
            # Foreign column-0 line inside an open block: abort, replay.
            self._requeue_block(queue, offset + len(raw))
            return

        if self._state is _State.AFTER_TERMINAL:
            if text == "":
                self._pending_bytes += raw
                self._state = _State.AFTER_TERMINAL_BLANK
                return
            if text in CHAIN_SEPARATORS:
                self._pending_bytes += raw
                self._state = _State.CHAIN_SEP
                return
            self._emit(spans)
            self._replay(queue, raw)
            return

        if self._state is _State.AFTER_TERMINAL_BLANK:
            if text in CHAIN_SEPARATORS:
                self._pending_bytes += raw
                self._state = _State.CHAIN_SEP
                return
            self._emit(spans)
            self._replay(queue, raw)
            return

        if self._state is _State.CHAIN_SEP:
            if text == "":
                self._pending_bytes += raw
                self._state = _State.CHAIN_SEP_BLANK
                return
            if text == HEADER_LINE:
                self._continue_block(raw)
                return
            self._emit(spans)
            self._replay(queue, raw)
            return

        if self._state is _State.CHAIN_SEP_BLANK:
            if text == HEADER_LINE:
                self._continue_block(raw)
                return
            self._emit(spans)
            self._replay(queue, raw)
            return

    def _begin(self, offset: int, raw: bytes) -> None:
        self._state = _State.IN_BLOCK
        self._block_start = offset
        self._block_end = offset + len(raw)
        self._block_bytes = bytearray(raw)
        self._pending_bytes = bytearray()

    def _continue_block(self, raw: bytes) -> None:
        self._block_bytes += self._pending_bytes + raw
        self._pending_bytes = bytearray()
        self._state = _State.IN_BLOCK

    def _replay(self, queue: deque[bytes], raw: bytes) -> None:
        self._offset -= len(raw)
        queue.appendleft(raw)

    def _requeue_block(self, queue: deque[bytes], consumed_through: int) -> None:
        block = bytes(self._block_bytes)
        self._reset()
        # Skip the first line (the failed block opener); replay the rest in
        # stream order ahead of anything already queued.
        first_nl = block.find(b"\n")
        remainder = block[first_nl + 1 :] if first_nl >= 0 else b""
        self._offset = consumed_through - len(remainder)
        for line in reversed(_split_keepends(remainder)):
            queue.appendleft(line)


def _split_keepends(data: bytes) -> list[bytes]:
    if not data:
        return []
    lines = data.split(b"\n")
    out = [piece + b"\n" for piece in lines[:-1]]
    if lines[-1]:
        out.append(lines[-1])
    return out


def detect_boundaries(
    stream_chunk: bytes, carry_state: BoundaryDetector | None = None
) -> tuple[list[TracebackSpan], BoundaryDetector]:
    """Feed one chunk to a detector, creating it on first use.

    Call carry_state.finish() after the last chunk to flush a block that
    ends exactly at end-of-stream.
    """
    state = carry_state if carry_state is not None else BoundaryDetector()
    return state.feed(stream_chunk), state


def _parse_single_block(lines: list[str]) -> tuple[ExceptionEvent | None, list[str]]:
    frames: list[StackFrame] = []
    warnings: list[str] = []
    syntax_frame: StackFrame | None = None
    terminal: re.Match | None = None

    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if line == HEADER_LINE or line == "":
            continue
        frame_match = _FRAME_RE.match(line)
        if frame_match:
            code = _source_echo(lines, i)
            frames.append(
                StackFrame(
                    file=frame_match.group("file"),
                    line=int(frame_match.group("line")),
                    function=frame_match.group("func"),
                    code_line=code,
                )
            )
            continue
        syntax_match = _SYNTAX_FILE_RE.match(line)
        if syntax_match:
            code = _source_echo(lines, i)
            syntax_frame = StackFrame(
                file=syntax_match.group("file"),
                line=int(syntax_match.group("line")),
                function="<module>",
                code_line=code,
            )
            continue
        if line.startswith('  File "'):
            warnings.append(f"malformed frame record dropped: {line.strip()!r}")
            continue
        if line.startswith((" ", "\t")):
            continue
        m = _is_terminal(line)
        if m is not None:
            terminal = m
            break

    if terminal is None:
        return None, warnings
    if syntax_frame is not None:
        frames.append(syntax_frame)
    event = ExceptionEvent(
        exception_type=terminal.group("type"),
        message=terminal.group("msg") or "",
        frames=frames,
        source=ParseSource.PARSED_TEXT,
        captured_at=now_ms(),
        parse_warnings=warnings,
    )
    return event, warnings


def _source_echo(lines: list[str], start: int) -> str | None:
    """The source line echoed under a File record, skipping position markers."""
    for j in range(start, min(start + 2, len(lines))):
        line = lines[j]
        if not line.startswith((" ", "\t")) or line.strip() == "":
            return None
        if _MARKER_RE.match(line):
            continue
        if _FRAME_RE.match(line) or _SYNTAX_FILE_RE.match(line):
            return None
        return line.strip()
    return None


def parse_traceback(text: str | bytes) -> ExceptionEvent:
    """Parse one traceback block (possibly chained) into an ExceptionEvent.

    The returned event is the last-printed exception; earlier links of the
    chain land in cause_chain, earliest first.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    lines = text.splitlines()

    blocks: list[list[str]] = [[]]
    for line in lines:
        if line in CHAIN_SEPARATORS:
            blocks.append([])
        else:
            blocks[-1].append(line)

    events: list[ExceptionEvent] = []
    warnings: list[str] = []
    for block_lines in blocks:
        event, block_warnings = _parse_single_block(block_lines)
        warnings.extend(block_warnings)
        if event is None:
            if block_lines and any(line.strip() for line in block_lines):
                warnings.append("chain segment without terminal line dropped")
            continue
        events.append(event)

    if not events:
        raise NoTracebackFound("text matches no traceback grammar")

    result = events[-1]
    result.cause_chain = events[:-1]
    result.parse_warnings = warnings
    return result


def parse_structured(payload: dict | str | bytes) -> ExceptionEvent:
    """Map one shim wire document into an ExceptionEvent.

    Raises SchemaViolation when a required key is missing or the wrong shape;
    callers log the raw payload and skip it.
    """
    if isinstance(payload, (str, bytes)):
        try:
            payload = json.loads(payload)
        except (ValueError, UnicodeDecodeError) as exc:
            raise SchemaViolation(f"payload is not JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaViolation("payload is not an object")

    version = payload.get("schema_version", 1)
    if version != 1:
        raise SchemaViolation(f"unsupported schema_version: {version!r}")

    event = _structured_event(payload)

    chain = payload.get("cause_chain", [])
    if not isinstance(chain, list):
        raise SchemaViolation("cause_chain is not a list")
    event.cause_chain = [_structured_event(doc) for doc in chain]

    ts = payload.get("ts")
    if isinstance(ts, str):
        try:
            event.captured_at = parse_iso_ms(ts)
        except ValueError:
            event.captured_at = now_ms()
    else:
        event.captured_at = now_ms()

    thread = payload.get("thread")
    event.thread = thread if isinstance(thread, str) else None
    return event


def _structured_event(doc: object) -> ExceptionEvent:
    if not isinstance(doc, dict):
        raise SchemaViolation("event document is not an object")
    exc_type = doc.get("type")
    if not isinstance(exc_type, str) or not exc_type:
        raise SchemaViolation("missing required key: type")
    message = doc.get("message", "")
    if not isinstance(message, str):
        raise SchemaViolation("message is not a string")

    raw_frames = doc.get("frames", [])
    if not isinstance(raw_frames, list):
        raise SchemaViolation("frames is not a list")
    frames: list[StackFrame] = []
    for raw in raw_frames:
        if not isinstance(raw, dict):
            raise SchemaViolation("frame is not an object")
        file = raw.get("file")
        line = raw.get("line")
        if not isinstance(file, str) or not file:
            raise SchemaViolation("frame missing file")
        if not isinstance(line, int) or line < 1:
            raise SchemaViolation("frame line must be a positive integer")
        function = raw.get("function") or "<module>"
        if not isinstance(function, str):
            raise SchemaViolation("frame function is not a string")
        code_line = raw.get("code_line")
        if code_line is not None and not isinstance(code_line, str):
            raise SchemaViolation("frame code_line is not a string")
        frames.append(StackFrame(file=file, line=line, function=function, code_line=code_line))

    base_classes = doc.get("base_classes")
    if base_classes is not None:
        if not isinstance(base_classes, list) or not all(
            isinstance(b, str) for b in base_classes
        ):
            raise SchemaViolation("base_classes is not a list of strings")

    return ExceptionEvent(
        exception_type=exc_type,
        message=message,
        frames=frames,
        base_classes=base_classes,
        source=ParseSource.STRUCTURED_HOOK,
        captured_at=now_ms(),
    )


def extract_context(frame: StackFrame, source_root: str | Path | None = None) -> ContextSnippet:
    """Read the source lines around a frame, clipped to file bounds.

    Never raises: an unreadable file yields an empty snippet with a reason
    tag so narration can proceed without source.
    """
    path = Path(frame.file)
    if not path.is_absolute() and source_root is not None:
        path = Path(source_root) / path
    try:
        source_lines = path.read_text(encoding="utf-8", errors="replace").splitlines()
    except OSError:
        return ContextSnippet(lines=[], error_line=frame.line, reason="source unavailable")

    low = max(1, frame.line - 2)
    high = min(len(source_lines), frame.line + 2)
    if low > high:
        return ContextSnippet(lines=[], error_line=frame.line, reason="line out of range")
    picked = [(n, source_lines[n - 1]) for n in range(low, high + 1)]
    return ContextSnippet(lines=picked, error_line=frame.line)
