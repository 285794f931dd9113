"""Event sequencing: the single path every captured exception flows through.

One Pipeline owns event-id assignment, duplicate suppression between the
text and structured capture routes, classification, narration, persistence,
recurrence suggestions, and dashboard broadcast. All entry points are
thread-safe; a single internal lock makes the pipeline a sequencer.
"""
from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass

from .gateway import SpeechGateway, UtteranceRecord
from .ledger import ErrorLedger, LedgerRecord, signature_of
from .narration import (
    NarrationMode,
    TemplateSet,
    plan_prosody,
    render_message,
    render_suggestion,
)
from .taxonomy import Classification, MatchRule, Family, Severity, TaxonomyTable, classify
from .timefmt import now_ms
from .traceparse import ExceptionEvent, ParseSource, StackFrame

logger = logging.getLogger(__name__)

DEDUP_WINDOW_MS = 2000
BUS_CLIENT_BUFFER = 256


@dataclass
class PipelineTimings:
    event_id: int
    t_captured: int
    t_classified: int
    t_first_chunk: int
    t_render_notified: int


@dataclass
class PipelineCounters:
    captured: int = 0
    appended: int = 0
    deduplicated: int = 0
    schema_violations: int = 0
    suggestions: int = 0

    def as_dict(self) -> dict:
        return {
            "captured": self.captured,
            "appended": self.appended,
            "deduplicated": self.deduplicated,
            "schema_violations": self.schema_violations,
            "suggestions": self.suggestions,
        }


class BusClient:
    """One subscriber's bounded event buffer (drop-oldest when behind)."""

    def __init__(self, buffer_size: int = BUS_CLIENT_BUFFER) -> None:
        self._items: deque[tuple[str, dict]] = deque()
        self._buffer_size = buffer_size
        self._lock = threading.Lock()
        self._ready = threading.Event()
        self.dropped = 0

    def put(self, name: str, data: dict) -> None:
        with self._lock:
            if len(self._items) >= self._buffer_size:
                self._items.popleft()
                self.dropped += 1
            self._items.append((name, data))
            self._ready.set()

    def get(self, timeout: float | None = None) -> tuple[str, dict] | None:
        if not self._ready.wait(timeout=timeout):
            return None
        with self._lock:
            if not self._items:
                self._ready.clear()
                return None
            item = self._items.popleft()
            if not self._items:
                self._ready.clear()
            return item

    def take_dropped(self) -> int:
        with self._lock:
            count = self.dropped
            self.dropped = 0
            return count


class EventBus:
    """Fan-out of pipeline events to any number of subscribers."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._clients: list[BusClient] = []

    def subscribe(self, buffer_size: int = BUS_CLIENT_BUFFER) -> BusClient:
        client = BusClient(buffer_size)
        with self._lock:
            self._clients.append(client)
        return client

    def unsubscribe(self, client: BusClient) -> None:
        with self._lock:
            if client in self._clients:
                self._clients.remove(client)

    def publish(self, name: str, data: dict) -> None:
        with self._lock:
            clients = list(self._clients)
        for client in clients:
            client.put(name, data)


@dataclass(eq=False)
class _PendingText:
    deadline_ms: int
    key: tuple
    event: ExceptionEvent


def _dedup_key(event: ExceptionEvent) -> tuple:
    frame = event.innermost
    if frame is None:
        return (event.exception_type, None, None)
    return (event.exception_type, frame.file, frame.line)


class Pipeline:
    """classify -> narrate -> persist -> suggest -> broadcast, in order."""

    def __init__(
        self,
        *,
        taxonomy: TaxonomyTable,
        templates: TemplateSet,
        gateway: SpeechGateway,
        ledger: ErrorLedger,
        bus: EventBus | None = None,
        mode: NarrationMode = NarrationMode.STANDARD,
        base_rate_wpm: int = 160,
        quarantine_text: bool = False,
        dedup_window_ms: int = DEDUP_WINDOW_MS,
        clock=now_ms,
        on_commit=None,
    ) -> None:
        self.taxonomy = taxonomy
        self.templates = templates
        self.gateway = gateway
        self.ledger = ledger
        self.bus = bus if bus is not None else EventBus()
        self.mode = mode
        self.base_rate_wpm = base_rate_wpm
        self.quarantine_text = quarantine_text
        self.dedup_window_ms = dedup_window_ms
        self.clock = clock
        self.on_commit = on_commit
        self.counters = PipelineCounters()
        self.timings: list[PipelineTimings] = []
        self._lock = threading.RLock()
        self._pending_text: list[_PendingText] = []
        # key -> captured_at of the most recent committed event per route.
        self._recent: dict[tuple, dict[ParseSource, int]] = {}

    # -- intake -------------------------------------------------------------

    def handle(self, event: ExceptionEvent) -> LedgerRecord | None:
        """Feed one captured event in; returns its ledger record, or None
        when the event was quarantined or suppressed as a duplicate."""
        with self._lock:
            self.counters.captured += 1
            key = _dedup_key(event)
            if event.source is ParseSource.STRUCTURED_HOOK:
                self._absorb_pending_twin(key, event)
                if self._is_recent_duplicate(key, event, ParseSource.PARSED_TEXT):
                    self.counters.deduplicated += 1
                    logger.debug("structured twin of committed text event dropped")
                    return None
                return self._commit(event)
            # Parsed-text route.
            if self._is_recent_duplicate(key, event, ParseSource.STRUCTURED_HOOK):
                self.counters.deduplicated += 1
                return None
            if self.quarantine_text:
                self._pending_text.append(
                    _PendingText(self.clock() + self.dedup_window_ms, key, event)
                )
                return None
            return self._commit(event)

    def record_schema_violation(self, raw: str) -> None:
        """Account for a structured payload that failed validation."""
        with self._lock:
            self.counters.captured += 1
            self.counters.schema_violations += 1
        logger.warning("structured payload rejected: %s", raw[:500])

    def flush_quarantine(self, force: bool = False) -> list[LedgerRecord]:
        """Commit quarantined text events whose wait expired (or all)."""
        with self._lock:
            now = self.clock()
            ready = [p for p in self._pending_text if force or p.deadline_ms <= now]
            self._pending_text = [p for p in self._pending_text if p not in ready]
            return [self._commit(p.event) for p in ready]

    def _absorb_pending_twin(self, key: tuple, event: ExceptionEvent) -> None:
        for pending in list(self._pending_text):
            if pending.key == key and (
                abs(event.captured_at - pending.event.captured_at) <= self.dedup_window_ms
            ):
                self._pending_text.remove(pending)
                self.counters.deduplicated += 1
                return

    def _is_recent_duplicate(
        self, key: tuple, event: ExceptionEvent, other_route: ParseSource
    ) -> bool:
        stamps = self._recent.get(key)
        if not stamps or other_route not in stamps:
            return False
        return abs(event.captured_at - stamps[other_route]) <= self.dedup_window_ms

    # -- commit -------------------------------------------------------------

    def _commit(self, event: ExceptionEvent) -> LedgerRecord:
        t_captured = event.captured_at or self.clock()
        event.captured_at = t_captured

        classification = classify(event, self.taxonomy)
        t_classified = self.clock()

        record = self.ledger.append(event, classification)
        event.event_id = record.x.id

        text = render_message(event, classification, self.mode, self.templates)
        plan = plan_prosody(
            text,
            classification,
            self.mode,
            self.base_rate_wpm,
            event_id=record.x.id,
        )
        utterance = self.gateway.submit(
            plan, captured_at_ms=t_captured, frame_count=event.frame_count
        )
        t_first_chunk = self.clock()

        self._remember(event)
        self.counters.appended += 1

        self.bus.publish(
            "error",
            {
                "record": record.as_dict(),
                "classification": {
                    "family": classification.family.value,
                    "severity": classification.severity.value,
                    "matched_by": classification.matched_by.value,
                },
                "narration": utterance.status.value,
                "text": text,
            },
        )
        t_render_notified = self.clock()
        self.timings.append(
            PipelineTimings(
                event_id=record.x.id,
                t_captured=t_captured,
                t_classified=max(t_classified, t_captured),
                t_first_chunk=max(t_first_chunk, t_classified, t_captured),
                t_render_notified=max(t_render_notified, t_first_chunk, t_classified, t_captured),
            )
        )

        self._maybe_suggest(event, record)
        if self.on_commit is not None:
            try:
                self.on_commit(event, record)
            except Exception:
                logger.exception("commit callback failed")
        return record

    def _remember(self, event: ExceptionEvent) -> None:
        key = _dedup_key(event)
        stamps = self._recent.setdefault(key, {})
        stamps[event.source] = event.captured_at
        if len(self._recent) > 512:
            horizon = self.clock() - 5 * self.dedup_window_ms
            self._recent = {
                k: v for k, v in self._recent.items() if max(v.values()) >= horizon
            }

    def _maybe_suggest(self, event: ExceptionEvent, record: LedgerRecord) -> None:
        sig = signature_of(event)
        if not self.ledger.recurrence_check(sig, event.captured_at):
            return
        count = self.ledger.window_count(sig, event.captured_at)
        sentence = render_suggestion(
            event.exception_type, count, _window_label(self.ledger.window.window_seconds)
        )
        suggestion_cls = Classification(
            family=Family.LOGICAL_FLAWS, severity=Severity.INFO, matched_by=MatchRule.DEFAULT
        )
        plan = plan_prosody(
            sentence, suggestion_cls, self.mode, self.base_rate_wpm, event_id=record.x.id
        )
        self.gateway.submit(plan)
        self.counters.suggestions += 1
        self.bus.publish(
            "suggestion",
            {"record_id": record.x.id, "text": sentence, "signature": sig.__dict__},
        )

    # -- renarration --------------------------------------------------------

    def narrate_record(self, record_id: int) -> UtteranceRecord:
        """Re-submit the narration for a stored record (dashboard action)."""
        record = self.ledger.get(record_id)
        frames = [
            StackFrame(
                file=f.get("file", ""),
                line=f.get("line", 0) or 0,
                function=f.get("function", "<module>"),
                code_line=f.get("code_line"),
            )
            for f in record.x.frames
            if isinstance(f, dict)
        ]
        event = ExceptionEvent(
            exception_type=record.exception,
            message=record.message,
            frames=[f for f in frames if f.file and f.line >= 1],
            source=ParseSource.PARSED_TEXT,
            captured_at=self.clock(),
            event_id=record.x.id,
        )
        classification = Classification(
            family=Family(record.x.family) if record.x.family else Family.LOGICAL_FLAWS,
            severity=Severity(record.x.severity) if record.x.severity else Severity.WARNING,
            matched_by=MatchRule.EXACT_NAME,
        )
        text = render_message(event, classification, self.mode, self.templates)
        plan = plan_prosody(
            text, classification, self.mode, self.base_rate_wpm, event_id=record.x.id
        )
        return self.gateway.submit(plan, frame_count=event.frame_count)


def _window_label(window_seconds: float) -> str:
    if window_seconds == 3600:
        return "hour"
    minutes = max(1, int(round(window_seconds / 60)))
    return f"{minutes} minutes"
