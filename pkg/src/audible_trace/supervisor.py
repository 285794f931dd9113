"""Child-process supervision and the ingest/replay entry points.

run() spawns the target command with stdout/stderr forwarded byte-for-byte
while the error stream (and, in structured mode, the injected hook's side
channel) feeds the pipeline. The child never sees the supervisor except as
an ordinary parent process; its exit code is passed through unchanged.
"""
from __future__ import annotations

import importlib.util
import json
import logging
import os
import shutil
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Callable

from .config import CaptureMode, SessionConfig
from .errors import ConfigError, FileUnreadable, SchemaViolation, SpawnFailure
from .gateway import SpeechGateway
from .ledger import ErrorLedger
from .narration import TemplateSet
from .pipeline import EventBus, Pipeline
from .taxonomy import TaxonomyTable
from .timefmt import iso_millis, now_ms
from .traceparse import (
    BoundaryDetector,
    ExceptionEvent,
    NoTracebackFound,
    parse_structured,
    parse_traceback,
)

logger = logging.getLogger(__name__)

SHIM_MODULE = "audible_trace_shim"
SENTINEL = b"##AUDIBLE-TRACE-EVENT## "
CHANNEL_POLL_S = 0.025
QUARANTINE_TICK_S = 0.05
READ_SIZE = 65536

SPAWN_FAILURE_EXIT = 127


@dataclass
class Runtime:
    """Everything one session wires together."""

    config: SessionConfig
    taxonomy: TaxonomyTable
    templates: TemplateSet
    ledger: ErrorLedger
    gateway: SpeechGateway
    bus: EventBus
    pipeline: Pipeline

    def close(self, drain: bool = True) -> None:
        self.gateway.close(drain=drain, timeout=30)


def build_runtime(
    cfg: SessionConfig,
    taxonomy: TaxonomyTable,
    templates: TemplateSet,
    *,
    clock: Callable[[], int] | None = None,
    sleeper: Callable[[float], None] | None = None,
    on_commit=None,
) -> Runtime:
    bus = EventBus()
    ledger = ErrorLedger(cfg.ledger_path)
    gateway = SpeechGateway(
        cfg.backend,
        base_rate_wpm=cfg.base_rate_wpm,
        muted=cfg.mute,
        clock=clock,
        sleeper=sleeper,
        on_status=lambda record: bus.publish("narration", record.as_dict()),
    )
    pipeline = Pipeline(
        taxonomy=taxonomy,
        templates=templates,
        gateway=gateway,
        ledger=ledger,
        bus=bus,
        mode=cfg.mode,
        base_rate_wpm=cfg.base_rate_wpm,
        quarantine_text=(cfg.capture == CaptureMode.BOTH),
        on_commit=on_commit,
    )
    return Runtime(
        config=cfg,
        taxonomy=taxonomy,
        templates=templates,
        ledger=ledger,
        gateway=gateway,
        bus=bus,
        pipeline=pipeline,
    )


def event_to_wire(event: ExceptionEvent) -> dict:
    """Serialize an event back into the version-1 wire schema."""
    return {
        "schema_version": 1,
        "type": event.exception_type,
        "message": event.message,
        "frames": [frame.as_dict() for frame in event.frames],
        "base_classes": list(event.base_classes or []),
        "cause_chain": [
            {
                "type": cause.exception_type,
                "message": cause.message,
                "frames": [frame.as_dict() for frame in cause.frames],
                "base_classes": list(cause.base_classes or []),
            }
            for cause in event.cause_chain
        ],
        "thread": event.thread,
        "ts": iso_millis(event.captured_at or now_ms()),
    }


class ShimInjection:
    """Session-scoped temp dir holding the capture hook for the child.

    The shim module file is copied next to a generated sitecustomize.py and
    the directory is prepended to PYTHONPATH, so any CPython child picks it
    up at startup regardless of which interpreter or environment it uses.
    """

    def __init__(self, channel_path: Path) -> None:
        spec = importlib.util.find_spec(SHIM_MODULE)
        if spec is None or not spec.origin:
            raise ConfigError(
                "structured capture needs the audible-trace-shim package "
                "(pip install audible-trace-shim)"
            )
        self.channel_path = channel_path
        self._dir = Path(tempfile.mkdtemp(prefix="audible-trace-"))
        shutil.copy(spec.origin, self._dir / f"{SHIM_MODULE}.py")
        (self._dir / "sitecustomize.py").write_text(
            "try:\n"
            f"    import {SHIM_MODULE}\n"
            f"    {SHIM_MODULE}.auto_inject()\n"
            "except Exception:\n"
            "    pass\n",
            encoding="utf-8",
        )
        channel_path.touch()

    def child_env(self, base: dict | None = None) -> dict:
        env = dict(base if base is not None else os.environ)
        existing = env.get("PYTHONPATH", "")
        env["PYTHONPATH"] = (
            f"{self._dir}{os.pathsep}{existing}" if existing else str(self._dir)
        )
        env["AUDIBLE_TRACE_EVENT_PATH"] = str(self.channel_path)
        return env

    def cleanup(self) -> None:
        shutil.rmtree(self._dir, ignore_errors=True)


class ChannelTailer:
    """Polls the shim's NDJSON channel file and feeds complete lines in."""

    def __init__(self, path: Path, on_line: Callable[[bytes], None]) -> None:
        self.path = path
        self.on_line = on_line
        self._offset = 0
        self._carry = b""
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._loop, name="channel-tailer", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.is_set():
            self.drain()
            self._stop.wait(CHANNEL_POLL_S)

    def drain(self) -> None:
        try:
            with open(self.path, "rb") as fh:
                fh.seek(self._offset)
                data = fh.read()
        except OSError:
            return
        if not data:
            return
        self._offset += len(data)
        buf = self._carry + data
        *lines, self._carry = buf.split(b"\n")
        for line in lines:
            if line.strip():
                self.on_line(line)

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self.drain()
        if self._carry.strip():
            self.on_line(self._carry)
            self._carry = b""


class StreamForwarder:
    """Forwards one child stream byte-identically, optionally teeing the
    bytes into a boundary detector."""

    def __init__(
        self,
        source: BinaryIO,
        sink: BinaryIO,
        *,
        detector: BoundaryDetector | None = None,
        on_span: Callable[[bytes], None] | None = None,
    ) -> None:
        self.source = source
        self.sink = sink
        self.detector = detector
        self.on_span = on_span
        self._thread = threading.Thread(target=self._loop, name="stream-forwarder", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def _loop(self) -> None:
        while True:
            data = self.source.read(READ_SIZE)
            if not data:
                break
            self.sink.write(data)
            self.sink.flush()
            if self.detector is not None:
                for span in self.detector.feed(data):
                    self._emit(span.text)
        if self.detector is not None:
            for span in self.detector.finish():
                self._emit(span.text)

    def _emit(self, block: bytes) -> None:
        if self.on_span is not None:
            self.on_span(block)

    def join(self, timeout: float | None = None) -> None:
        self._thread.join(timeout=timeout)


class SessionRecorder:
    """Writes committed events back out as a timestamped wire-event file."""

    def __init__(self, path: Path) -> None:
        self.path = path
        self._lock = threading.Lock()
        self._fh = open(path, "w", encoding="utf-8")

    def __call__(self, event: ExceptionEvent, record) -> None:
        line = json.dumps(event_to_wire(event), ensure_ascii=False)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def _handle_structured_line(pipeline: Pipeline, line: bytes) -> None:
    try:
        event = parse_structured(line)
    except SchemaViolation as exc:
        pipeline.record_schema_violation(
            f"{exc}: {line.decode('utf-8', errors='replace')}"
        )
        return
    pipeline.handle(event)


def _handle_text_span(pipeline: Pipeline, block: bytes) -> None:
    try:
        event = parse_traceback(block)
    except NoTracebackFound:
        logger.debug("span did not parse: %r", block[:200])
        return
    event.captured_at = now_ms()
    pipeline.handle(event)


def run(cmd: list[str], runtime: Runtime) -> int:
    """Run one supervised child to completion; returns its exit code.

    Pipeline problems never touch the child's I/O or exit status; spawn
    failure reports like a shell (exit 127 after a diagnostic).
    """
    if not cmd:
        raise SpawnFailure("no command given")
    cfg = runtime.config
    pipeline = runtime.pipeline

    injection: ShimInjection | None = None
    tailer: ChannelTailer | None = None
    env = None
    channel_dir: tempfile.TemporaryDirectory | None = None
    if cfg.capture in (CaptureMode.STRUCTURED, CaptureMode.BOTH):
        channel_dir = tempfile.TemporaryDirectory(prefix="audible-trace-ch-")
        channel_path = Path(channel_dir.name) / "events.ndjson"
        injection = ShimInjection(channel_path)
        env = injection.child_env()
        tailer = ChannelTailer(
            channel_path, lambda line: _handle_structured_line(pipeline, line)
        )

    detector = BoundaryDetector() if cfg.capture in (CaptureMode.TEXT, CaptureMode.BOTH) else None

    try:
        proc = subprocess.Popen(
            cmd,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            bufsize=0,
            env=env,
        )
    except OSError as exc:
        print(f"audible-trace: cannot run {cmd[0]!r}: {exc}", file=sys.stderr)
        if injection is not None:
            injection.cleanup()
        if channel_dir is not None:
            channel_dir.cleanup()
        return SPAWN_FAILURE_EXIT

    stdout_fwd = StreamForwarder(proc.stdout, sys.stdout.buffer)
    stderr_fwd = StreamForwarder(
        proc.stderr,
        sys.stderr.buffer,
        detector=detector,
        on_span=lambda block: _handle_text_span(pipeline, block),
    )
    stdout_fwd.start()
    stderr_fwd.start()
    if tailer is not None:
        tailer.start()

    # Only the dual-route mode needs periodic wakeups (quarantine aging);
    # otherwise block in waitpid so child exit is detected with no lag.
    tick = QUARANTINE_TICK_S if cfg.capture == CaptureMode.BOTH else None
    interrupted = 0
    while True:
        try:
            rc = proc.wait(timeout=tick)
            break
        except subprocess.TimeoutExpired:
            pipeline.flush_quarantine()
        except KeyboardInterrupt:
            # First interrupt belongs to the child (same process group);
            # insist only if it ignores two of them.
            interrupted += 1
            if interrupted >= 3:
                proc.kill()
            elif interrupted == 2:
                proc.terminate()

    stdout_fwd.join(timeout=10)
    stderr_fwd.join(timeout=10)
    if tailer is not None:
        tailer.stop()
    pipeline.flush_quarantine(force=True)

    if injection is not None:
        injection.cleanup()
    if channel_dir is not None:
        channel_dir.cleanup()

    if rc is not None and rc < 0:
        return 128 - rc
    return rc


def ingest(stream: BinaryIO, fmt: str, runtime: Runtime) -> dict:
    """Feed a log stream or an event file through the pipeline.

    text: boundary detection over the bytes, with sentinel-prefixed hook
    lines recovered as structured events. jsonl: one wire document per
    line. Returns {"events", "narrated", "malformed"}.
    """
    pipeline = runtime.pipeline
    start_appended = pipeline.counters.appended
    start_suggestions = pipeline.counters.suggestions
    malformed = 0

    def structured_line(line: bytes) -> int:
        try:
            event = parse_structured(line)
        except SchemaViolation as exc:
            pipeline.record_schema_violation(
                f"{exc}: {line.decode('utf-8', errors='replace')}"
            )
            return 1
        event.captured_at = now_ms()
        pipeline.handle(event)
        return 0

    if fmt == "jsonl":
        for raw in stream:
            if raw.strip():
                malformed += structured_line(raw)
    elif fmt == "text":
        detector = BoundaryDetector()
        carry = b""

        def feed_text(data: bytes) -> None:
            for span in detector.feed(data):
                _handle_text_span(pipeline, span.text)

        while True:
            chunk = stream.read(READ_SIZE)
            if not chunk:
                break
            buf = carry + chunk
            *lines, carry = buf.split(b"\n")
            for line in lines:
                if line.startswith(SENTINEL):
                    malformed += structured_line(line[len(SENTINEL):])
                else:
                    feed_text(line + b"\n")
        if carry:
            if carry.startswith(SENTINEL):
                malformed += structured_line(carry[len(SENTINEL):])
            else:
                feed_text(carry)
        for span in detector.finish():
            _handle_text_span(pipeline, span.text)
        pipeline.flush_quarantine(force=True)
    else:
        raise ConfigError(f"unknown ingest format: {fmt!r}")

    return {
        "events": pipeline.counters.appended - start_appended,
        "narrated": (pipeline.counters.appended - start_appended)
        + (pipeline.counters.suggestions - start_suggestions),
        "malformed": malformed,
    }


def replay(path: str | Path, speed: float, runtime: Runtime) -> dict:
    """Re-inject a recorded wire-event file, preserving scaled gaps.

    Each event's capture timestamp is reset to its injection moment so the
    latency report measures this pipeline, not history.
    """
    if speed <= 0:
        raise ValueError("speed must be positive")
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FileUnreadable(f"cannot read session file: {exc}") from exc

    pipeline = runtime.pipeline
    events: list[ExceptionEvent] = []
    malformed = 0
    for line in lines:
        if not line.strip():
            continue
        try:
            events.append(parse_structured(line))
        except SchemaViolation as exc:
            pipeline.record_schema_violation(f"{exc}: {line}")
            malformed += 1

    simulate = runtime.config.backend.simulate_timing
    previous_ts: int | None = None
    injected = 0
    for event in events:
        if previous_ts is not None and simulate:
            gap_s = max(0, event.captured_at - previous_ts) / 1000.0 / speed
            if gap_s > 0:
                time.sleep(gap_s)
        previous_ts = event.captured_at
        event.captured_at = now_ms()
        pipeline.handle(event)
        injected += 1

    runtime.gateway.wait_idle(timeout=60)
    try:
        latency = runtime.gateway.latency_report()
    except Exception:
        latency = None

    timings = pipeline.timings
    def _stage(ms_pairs: list[int]) -> dict:
        if not ms_pairs:
            return {"median_ms": None, "max_ms": None}
        ordered = sorted(ms_pairs)
        return {
            "median_ms": ordered[len(ordered) // 2],
            "max_ms": ordered[-1],
        }

    return {
        "events": injected,
        "malformed": malformed,
        "latency": latency,
        "stages": {
            "classify": _stage([t.t_classified - t.t_captured for t in timings]),
            "submit": _stage([t.t_first_chunk - t.t_captured for t in timings]),
            "notify": _stage([t.t_render_notified - t.t_captured for t in timings]),
        },
    }
