"""Persistent error history, recurrence detection, and doc deep links.

The store is an append-only JSON-lines file. Each record line carries the
frozen core fields (timestamp, exception, message, file, line, frequency,
resolution) at the top level and everything else under "x". Resolution
edits are appended as amendment lines and replayed on load, latest wins.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import quote_plus

from .errors import NotFound, StorageFailure
from .taxonomy import Classification
from .timefmt import iso_seconds, now_ms, parse_iso_ms
from .traceparse import ExceptionEvent

logger = logging.getLogger(__name__)

DOC_BASE = "https://docs.python.org/3/library/exceptions.html#"
PYPI_SEARCH = "https://pypi.org/search/?q="

WINDOW_SECONDS = 600
RECURRENCE_THRESHOLD = 4

UNKNOWN_FILE = "<unknown>"


@dataclass(frozen=True)
class Signature:
    exception: str
    file: str
    line: int


@dataclass
class RecordExtensions:
    id: int
    family: str
    severity: str
    frames: list[dict]
    source: str


@dataclass
class LedgerRecord:
    timestamp: str
    exception: str
    message: str
    file: str
    line: int
    frequency: int
    resolution: str | None
    x: RecordExtensions

    @property
    def signature(self) -> Signature:
        return Signature(self.exception, self.file, self.line)

    @property
    def timestamp_ms(self) -> int:
        return parse_iso_ms(self.timestamp)

    def as_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "exception": self.exception,
            "message": self.message,
            "file": self.file,
            "line": self.line,
            "frequency": self.frequency,
            "resolution": self.resolution,
            "x": {
                "id": self.x.id,
                "family": self.x.family,
                "severity": self.x.severity,
                "frames": self.x.frames,
                "source": self.x.source,
            },
        }


def signature_of(event: ExceptionEvent) -> Signature:
    frame = event.innermost
    if frame is None:
        return Signature(event.exception_type, UNKNOWN_FILE, 0)
    return Signature(event.exception_type, frame.file, frame.line)


class RecurrenceWindow:
    """Sliding-window recurrence state for one ledger.

    Timestamps are float seconds. The check is half-open (now - window, now]
    with a trigger at >= 4 events and a one-window cooldown per signature.
    """

    def __init__(self, window_seconds: float = WINDOW_SECONDS) -> None:
        self.window_seconds = window_seconds
        self._events: dict[Signature, list[float]] = {}
        self._last_trigger: dict[Signature, float] = {}

    def observe(self, sig: Signature, ts_s: float) -> None:
        self._events.setdefault(sig, []).append(ts_s)

    def count(self, sig: Signature, now_s: float) -> int:
        """Events for sig inside the half-open window ending at now_s."""
        low = now_s - self.window_seconds
        return sum(1 for t in self._events.get(sig, ()) if low < t <= now_s)

    def check(self, sig: Signature, now_s: float) -> bool:
        times = self._events.get(sig)
        if not times:
            return False
        low = now_s - self.window_seconds
        # Lazy purge keeps the list bounded without a background task.
        kept = [t for t in times if t > low]
        if len(kept) != len(times):
            self._events[sig] = kept
        in_window = sum(1 for t in kept if t <= now_s)
        if in_window < RECURRENCE_THRESHOLD:
            return False
        last = self._last_trigger.get(sig)
        if last is not None and (now_s - last) < self.window_seconds:
            return False
        self._last_trigger[sig] = now_s
        return True


class ErrorLedger:
    """Single-writer JSON-lines error history with in-memory index."""

    def __init__(
        self,
        path: str | Path,
        *,
        window_seconds: float = WINDOW_SECONDS,
    ) -> None:
        self.path = Path(path)
        self.window = RecurrenceWindow(window_seconds)
        self._lock = threading.RLock()
        self._records: list[LedgerRecord] = []
        self._by_id: dict[int, LedgerRecord] = {}
        self._freq: dict[Signature, int] = {}
        self._next_id = 1
        self._degraded = False
        self._load()

    # -- load ---------------------------------------------------------------

    def _load(self) -> None:
        if not self.path.exists():
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise StorageFailure(f"cannot create ledger directory: {exc}") from exc
            return
        try:
            text = self.path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StorageFailure(f"cannot read ledger: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except ValueError:
                logger.warning("ledger line %d is not JSON; skipped", lineno)
                continue
            if not isinstance(doc, dict):
                logger.warning("ledger line %d is not an object; skipped", lineno)
                continue
            if "amend" in doc:
                self._apply_amendment(doc, lineno)
            else:
                self._apply_record(doc, lineno)

    def _apply_record(self, doc: dict, lineno: int) -> None:
        try:
            ext_doc = doc.get("x", {})
            record = LedgerRecord(
                timestamp=doc["timestamp"],
                exception=doc["exception"],
                message=doc["message"],
                file=doc["file"],
                line=doc["line"],
                frequency=doc["frequency"],
                resolution=doc.get("resolution"),
                x=RecordExtensions(
                    id=ext_doc.get("id", self._next_id),
                    family=ext_doc.get("family", ""),
                    severity=ext_doc.get("severity", ""),
                    frames=ext_doc.get("frames", []),
                    source=ext_doc.get("source", ""),
                ),
            )
        except KeyError as exc:
            logger.warning("ledger line %d missing key %s; skipped", lineno, exc)
            return
        self._index(record)

    def _apply_amendment(self, doc: dict, lineno: int) -> None:
        record = self._by_id.get(doc.get("amend"))
        if record is None:
            logger.warning("ledger line %d amends unknown id; skipped", lineno)
            return
        record.resolution = doc.get("resolution")

    def _index(self, record: LedgerRecord) -> None:
        self._records.append(record)
        self._by_id[record.x.id] = record
        sig = record.signature
        self._freq[sig] = max(self._freq.get(sig, 0), record.frequency)
        try:
            self.window.observe(sig, record.timestamp_ms / 1000.0)
        except ValueError:
            logger.warning("record %d has unparseable timestamp", record.x.id)
        self._next_id = max(self._next_id, record.x.id + 1)

    # -- write --------------------------------------------------------------

    def append(self, event: ExceptionEvent, cls: Classification) -> LedgerRecord:
        """Persist one classified event; returns the indexed record.

        Disk trouble is logged, not raised: the event must still reach
        narration, so the record stays live in memory.
        """
        with self._lock:
            sig = signature_of(event)
            self._freq[sig] = self._freq.get(sig, 0) + 1
            captured = event.captured_at or now_ms()
            record = LedgerRecord(
                timestamp=iso_seconds(captured),
                exception=event.exception_type,
                message=event.message,
                file=sig.file,
                line=sig.line,
                frequency=self._freq[sig],
                resolution=None,
                x=RecordExtensions(
                    id=self._next_id,
                    family=cls.family.value,
                    severity=cls.severity.value,
                    frames=[frame.as_dict() for frame in event.frames],
                    source=event.source.value,
                ),
            )
            self._next_id += 1
            self._records.append(record)
            self._by_id[record.x.id] = record
            self.window.observe(sig, captured / 1000.0)
            self._write_line(record.as_dict())
            return record

    def _write_line(self, doc: dict) -> None:
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, ensure_ascii=False) + "\n")
                fh.flush()
            self._degraded = False
        except OSError as exc:
            if not self._degraded:
                logger.error("ledger write failed (continuing in memory): %s", exc)
            self._degraded = True

    def recurrence_check(self, sig: Signature, now: int | None = None) -> bool:
        """True when sig has recurred enough to warrant a suggestion."""
        with self._lock:
            now_s = (now if now is not None else now_ms()) / 1000.0
            return self.window.check(sig, now_s)

    def window_count(self, sig: Signature, now: int | None = None) -> int:
        """In-window event count for sig (used for suggestion wording)."""
        with self._lock:
            now_s = (now if now is not None else now_ms()) / 1000.0
            return self.window.count(sig, now_s)

    def set_resolution(self, record_id: int, text: str) -> LedgerRecord:
        with self._lock:
            record = self._by_id.get(record_id)
            if record is None:
                raise NotFound(f"no ledger record with id {record_id}")
            record.resolution = text
            self._write_line({"amend": record_id, "resolution": text})
            return record

    # -- read ---------------------------------------------------------------

    def get(self, record_id: int) -> LedgerRecord:
        with self._lock:
            record = self._by_id.get(record_id)
            if record is None:
                raise NotFound(f"no ledger record with id {record_id}")
            return record

    def query(
        self,
        *,
        type: str | None = None,
        file: str | None = None,
        since: int | None = None,
        resolved: bool | None = None,
        offset: int = 0,
        limit: int = 50,
    ) -> tuple[list[LedgerRecord], int]:
        """Filtered records, newest first by id; returns (page, total)."""
        with self._lock:
            matches = []
            for record in self._records:
                if type is not None and record.exception != type:
                    continue
                if file is not None and record.file != file:
                    continue
                if since is not None:
                    try:
                        if record.timestamp_ms < since:
                            continue
                    except ValueError:
                        continue
                if resolved is not None and (record.resolution is not None) != resolved:
                    continue
                matches.append(record)
            matches.sort(key=lambda r: r.x.id, reverse=True)
            return matches[offset : offset + limit], len(matches)

    @property
    def records(self) -> list[LedgerRecord]:
        with self._lock:
            return list(self._records)

    def frequency(self, sig: Signature) -> int:
        with self._lock:
            return self._freq.get(sig, 0)

    def hotspots(self, window_seconds: float = WINDOW_SECONDS, limit: int = 10) -> list[dict]:
        """Signatures with the most events inside the trailing window."""
        with self._lock:
            low = now_ms() / 1000.0 - window_seconds
            counts: dict[Signature, int] = {}
            for record in self._records:
                try:
                    ts = record.timestamp_ms / 1000.0
                except ValueError:
                    continue
                if ts > low:
                    sig = record.signature
                    counts[sig] = counts.get(sig, 0) + 1
            ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].exception))
            return [
                {
                    "exception": sig.exception,
                    "file": sig.file,
                    "line": sig.line,
                    "count": count,
                }
                for sig, count in ranked[:limit]
            ]


def gen_doc_url(
    exception_type: str,
    origin: str = "builtin",
    top_module: str | None = None,
) -> str:
    """Documentation deep link for an exception name.

    builtin -> the standard exceptions page anchor (lowercased name);
    third_party -> a package-index search for the owning top-level module.
    """
    if origin == "builtin":
        return DOC_BASE + exception_type.lower()
    module = top_module
    if not module:
        module = exception_type.split(".")[0] if "." in exception_type else exception_type
    return PYPI_SEARCH + quote_plus(module)


def doc_url_for(event: ExceptionEvent, builtin_names: frozenset[str]) -> str:
    """Pick origin for an event: builtin iff the name is in the shipped table."""
    name = event.exception_type
    if name in builtin_names:
        return gen_doc_url(name, "builtin")
    if "." in name:
        return gen_doc_url(name, "third_party", top_module=name.split(".")[0])
    frame = event.innermost
    top_module = None
    if frame is not None:
        stem = Path(frame.file).stem
        if stem and stem != "<unknown>":
            top_module = stem
    return gen_doc_url(name, "third_party", top_module=top_module)
