"""Speech gateway: one ordered utterance stream through a pluggable backend.

Submissions from any thread are serialized by a single playback loop.
Critical plans jump the queue (never preempting in-flight speech); the queue
is bounded, dropping the oldest non-Critical plan when full. The transcript
backend makes every utterance observable and, with sleeping disabled,
deterministic.
"""
from __future__ import annotations

import logging
import shlex
import statistics
import subprocess
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

from .errors import GatewayClosed, NoData
from .narration import NarrationPlan
from .taxonomy import Severity
from .timefmt import iso_millis, now_ms

logger = logging.getLogger(__name__)

QUEUE_LIMIT = 8

SIMPLE_MAX_FRAMES = 2
MODERATE_MAX_FRAMES = 9


class BackendKind(str, Enum):
    TRANSCRIPT = "transcript"
    EXTERNAL_COMMAND = "external_command"
    NULL = "null"


@dataclass
class Backend:
    kind: BackendKind = BackendKind.TRANSCRIPT
    transcript_path: Path | None = None
    command: str | None = None
    voice: str = ""
    simulate_timing: bool = True


class UtteranceStatus(str, Enum):
    QUEUED = "queued"
    SPOKEN = "spoken"
    DROPPED = "dropped"
    MUTED = "muted"


@dataclass
class UtteranceRecord:
    event_id: int
    submitted_at: int
    started_at: int | None = None
    finished_at: int | None = None
    status: UtteranceStatus = UtteranceStatus.QUEUED
    drop_reason: str | None = None
    frame_count: int = 0
    captured_at: int | None = None

    def as_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "status": self.status.value,
            "drop_reason": self.drop_reason,
        }


def _complexity_bucket(frame_count: int) -> str:
    if frame_count <= SIMPLE_MAX_FRAMES:
        return "simple"
    if frame_count <= MODERATE_MAX_FRAMES:
        return "moderate"
    return "complex"


class SpeechGateway:
    """Bounded priority queue in front of one speech backend.

    clock/sleeper are injectable for tests: clock() returns epoch ms,
    sleeper(seconds) blocks. Timing simulation honors
    backend.simulate_timing.
    """

    def __init__(
        self,
        backend: Backend,
        *,
        base_rate_wpm: int = 160,
        muted: bool = False,
        queue_limit: int = QUEUE_LIMIT,
        clock: Callable[[], int] | None = None,
        sleeper: Callable[[float], None] | None = None,
        on_status: Callable[[UtteranceRecord], None] | None = None,
    ) -> None:
        self.backend = backend
        self.base_rate_wpm = base_rate_wpm
        self.muted = muted
        self.queue_limit = queue_limit
        self._clock = clock or now_ms
        self._sleep = sleeper or time.sleep
        self._on_status = on_status
        self._lock = threading.Condition()
        self._queue: list[tuple[NarrationPlan, UtteranceRecord]] = []
        self._records: list[UtteranceRecord] = []
        self._closing = False
        self._drain_on_close = True
        self._idle = threading.Event()
        self._idle.set()
        self._transcript_lock = threading.Lock()
        self._worker = threading.Thread(
            target=self._playback_loop, name="speech-gateway", daemon=True
        )
        self._worker.start()

    # -- submission ---------------------------------------------------------

    def submit(
        self,
        plan: NarrationPlan,
        *,
        captured_at_ms: int | None = None,
        frame_count: int = 0,
    ) -> UtteranceRecord:
        """Enqueue a plan for playback; returns its live status record."""
        record = UtteranceRecord(
            event_id=plan.event_id,
            submitted_at=self._clock(),
            frame_count=frame_count,
            captured_at=captured_at_ms,
        )
        with self._lock:
            if self._closing:
                raise GatewayClosed("gateway is shutting down")
            self._records.append(record)
            if self.muted:
                record.status = UtteranceStatus.MUTED
            else:
                if len(self._queue) >= self.queue_limit:
                    self._drop_oldest_non_critical()
                if plan.severity is Severity.CRITICAL:
                    insert_at = 0
                    while (
                        insert_at < len(self._queue)
                        and self._queue[insert_at][0].severity is Severity.CRITICAL
                    ):
                        insert_at += 1
                    self._queue.insert(insert_at, (plan, record))
                else:
                    self._queue.append((plan, record))
                self._idle.clear()
                self._lock.notify_all()
        self._notify(record)
        return record

    def _drop_oldest_non_critical(self) -> None:
        for i, (queued_plan, queued_record) in enumerate(self._queue):
            if queued_plan.severity is not Severity.CRITICAL:
                del self._queue[i]
                queued_record.status = UtteranceStatus.DROPPED
                queued_record.drop_reason = "coalesced"
                self._notify(queued_record)
                return
        # All queued plans are Critical: the bound stretches rather than
        # dropping one.

    # -- playback -----------------------------------------------------------

    def _playback_loop(self) -> None:
        while True:
            with self._lock:
                while not self._queue and not self._closing:
                    self._idle.set()
                    self._lock.wait(timeout=0.5)
                if self._closing and (not self._queue or not self._drain_on_close):
                    for _, record in self._queue:
                        record.status = UtteranceStatus.DROPPED
                        record.drop_reason = "shutdown"
                        self._notify(record)
                    self._queue.clear()
                    self._idle.set()
                    return
                plan, record = self._queue.pop(0)
            self.speak(plan, record=record)
            with self._lock:
                if not self._queue:
                    self._idle.set()

    def speak(
        self, plan: NarrationPlan, backend: Backend | None = None, record: UtteranceRecord | None = None
    ) -> UtteranceRecord:
        """Emit one plan through the backend; called by the playback loop.

        Backend failures mark the record dropped and never propagate:
        narration failure must not kill the supervising process.
        """
        backend = backend or self.backend
        if record is None:
            record = UtteranceRecord(event_id=plan.event_id, submitted_at=self._clock())
            with self._lock:
                self._records.append(record)
        record.started_at = self._clock()
        try:
            if plan.alert_tone_ms and backend.simulate_timing:
                self._sleep(plan.alert_tone_ms / 1000.0)
            self._emit(plan, backend)
        except Exception as exc:
            record.status = UtteranceStatus.DROPPED
            record.drop_reason = str(exc)
            logger.warning("utterance %d dropped: %s", plan.event_id, exc)
        else:
            record.status = UtteranceStatus.SPOKEN
        record.finished_at = self._clock()
        self._notify(record)
        return record

    def _emit(self, plan: NarrationPlan, backend: Backend) -> None:
        ms_per_word = 60_000 / (plan.base_rate_wpm or self.base_rate_wpm)
        for chunk in plan.chunks:
            if backend.kind is BackendKind.TRANSCRIPT:
                line = "\t".join(
                    (
                        iso_millis(self._clock()),
                        str(plan.event_id),
                        str(chunk.pitch_shift_cents),
                        f"{chunk.rate_multiplier:g}",
                        chunk.text,
                    )
                )
                if backend.transcript_path is not None:
                    with self._transcript_lock:
                        with open(backend.transcript_path, "a", encoding="utf-8") as fh:
                            fh.write(line + "\n")
            elif backend.kind is BackendKind.EXTERNAL_COMMAND:
                self._run_command(backend, chunk.text, chunk.rate_multiplier, chunk.pitch_shift_cents)
            elif backend.kind is BackendKind.NULL:
                pass
            if backend.simulate_timing:
                words = len(chunk.text.split())
                duration_s = (words * ms_per_word / chunk.rate_multiplier + chunk.pause_after_ms) / 1000.0
                self._sleep(duration_s)

    def _run_command(self, backend: Backend, text: str, rate: float, pitch: int) -> None:
        if not backend.command:
            raise RuntimeError("external_command backend has no command configured")
        argv = [
            piece.format(text=text, rate=f"{rate:g}", pitch=str(pitch), voice=backend.voice)
            for piece in shlex.split(backend.command)
        ]
        result = subprocess.run(argv, capture_output=True)
        if result.returncode != 0:
            raise RuntimeError(f"backend exit {result.returncode}")

    # -- reporting ----------------------------------------------------------

    @property
    def records(self) -> list[UtteranceRecord]:
        with self._lock:
            return list(self._records)

    def latency_report(self) -> dict:
        """Per-complexity-bucket stats of started_at - captured_at seconds."""
        samples: dict[str, list[float]] = {"simple": [], "moderate": [], "complex": []}
        with self._lock:
            for record in self._records:
                if (
                    record.status is UtteranceStatus.SPOKEN
                    and record.started_at is not None
                    and record.captured_at is not None
                ):
                    bucket = _complexity_bucket(record.frame_count)
                    samples[bucket].append((record.started_at - record.captured_at) / 1000.0)
        if not any(samples.values()):
            raise NoData("no spoken utterances with capture timestamps")
        report: dict = {"buckets": {}}
        all_samples: list[float] = []
        for bucket, values in samples.items():
            all_samples.extend(values)
            report["buckets"][bucket] = _stats(values)
        report["overall"] = _stats(all_samples)
        return report

    # -- lifecycle ----------------------------------------------------------

    def wait_idle(self, timeout: float | None = None) -> bool:
        """Block until the queue is empty and playback is quiescent."""
        return self._idle.wait(timeout=timeout)

    def close(self, drain: bool = True, timeout: float | None = None) -> None:
        with self._lock:
            self._closing = True
            self._drain_on_close = drain
            self._lock.notify_all()
        self._worker.join(timeout=timeout)

    def _notify(self, record: UtteranceRecord) -> None:
        if self._on_status is not None:
            try:
                self._on_status(record)
            except Exception:
                logger.exception("utterance status callback failed")


def _stats(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "median_s": None, "mean_s": None, "stdev_s": None}
    return {
        "count": len(values),
        "median_s": statistics.median(values),
        "mean_s": statistics.fmean(values),
        "stdev_s": statistics.stdev(values) if len(values) > 1 else 0.0,
    }
