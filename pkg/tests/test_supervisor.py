"""Child supervision: pass-through I/O, capture routes, ingest and replay."""
from __future__ import annotations

import io
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from conftest import make_runtime

from audible_trace.config import SessionConfig
from audible_trace.errors import ConfigError, FileUnreadable, SpawnFailure
from audible_trace.gateway import Backend, BackendKind
from audible_trace.narration import make_template_set
from audible_trace.supervisor import (
    SENTINEL,
    SessionRecorder,
    ShimInjection,
    build_runtime,
    event_to_wire,
    ingest,
    replay,
    run,
)
from audible_trace.taxonomy import load_taxonomy
from audible_trace.traceparse import ExceptionEvent, ParseSource, StackFrame, parse_structured

CRASH = "x = {}\nprint('starting')\nx['missing']\n"
CLEAN = "import sys\nprint('out line')\nprint('err line', file=sys.stderr)\n"
SIGNALED = "import os, signal\nos.kill(os.getpid(), signal.SIGTERM)\n"


def write_script(tmp_path: Path, body: str, name: str = "child.py") -> Path:
    path = tmp_path / name
    path.write_text(body, encoding="utf-8")
    return path


def supervised(tmp_path, cmd, **runtime_kwargs):
    runtime = make_runtime(tmp_path, **runtime_kwargs)
    try:
        rc = run(cmd, runtime)
        runtime.gateway.wait_idle(timeout=10)
    finally:
        runtime.close()
    return rc, runtime


# ----------------------------------------------------------- exit codes


def test_clean_child_exits_zero(tmp_path, capfdbinary):
    script = write_script(tmp_path, CLEAN)
    rc, runtime = supervised(tmp_path, [sys.executable, str(script)])
    assert rc == 0
    assert runtime.ledger.records == []


def test_crashing_child_exit_code_passes_through(tmp_path, capfdbinary):
    script = write_script(tmp_path, "import sys\nsys.exit(3)\n")
    rc, _ = supervised(tmp_path, [sys.executable, str(script)])
    assert rc == 3


def test_signal_death_reports_128_plus_signal(tmp_path, capfdbinary):
    script = write_script(tmp_path, SIGNALED)
    rc, _ = supervised(tmp_path, [sys.executable, str(script)])
    assert rc == 128 + 15


def test_spawn_failure_exits_127_with_diagnostic(tmp_path, capfd):
    runtime = make_runtime(tmp_path)
    try:
        rc = run(["/no/such/binary-here"], runtime)
    finally:
        runtime.close()
    assert rc == 127
    err = capfd.readouterr().err
    assert "cannot run '/no/such/binary-here'" in err


def test_empty_command_is_a_programming_error(tmp_path):
    runtime = make_runtime(tmp_path)
    try:
        with pytest.raises(SpawnFailure):
            run([], runtime)
    finally:
        runtime.close()


# ----------------------------------------------------------- transparency


@pytest.mark.parametrize(
    "body",
    [CLEAN, CRASH, "import sys\nsys.stdout.write('no newline at end')\n"],
    ids=["clean", "crash", "unterminated"],
)
def test_child_streams_forwarded_byte_identically(tmp_path, capfdbinary, body):
    script = write_script(tmp_path, body)
    bare = subprocess.run(
        [sys.executable, str(script)], capture_output=True, check=False
    )
    rc, _ = supervised(tmp_path, [sys.executable, str(script)])
    captured = capfdbinary.readouterr()
    assert captured.out == bare.stdout
    assert captured.err == bare.stderr
    assert rc == bare.returncode


def test_child_binary_stdout_survives(tmp_path, capfdbinary):
    body = "import sys\nsys.stdout.buffer.write(bytes(range(256)))\n"
    script = write_script(tmp_path, body)
    supervised(tmp_path, [sys.executable, str(script)])
    assert capfdbinary.readouterr().out == bytes(range(256))


# ----------------------------------------------------------- capture routes


def test_text_capture_lands_in_ledger(tmp_path, capfdbinary):
    script = write_script(tmp_path, CRASH)
    rc, runtime = supervised(tmp_path, [sys.executable, str(script)], capture="text")
    assert rc == 1
    records = runtime.ledger.records
    assert len(records) == 1
    assert records[0].exception == "KeyError"
    assert records[0].file == str(script)
    assert records[0].line == 3
    assert records[0].x.source == "parsed_text"


def test_structured_capture_lands_in_ledger(tmp_path, capfdbinary):
    script = write_script(tmp_path, CRASH)
    rc, runtime = supervised(
        tmp_path, [sys.executable, str(script)], capture="structured"
    )
    assert rc == 1
    records = runtime.ledger.records
    assert len(records) == 1
    assert records[0].exception == "KeyError"
    assert records[0].x.source == "structured_hook"


def test_both_routes_yield_one_record(tmp_path, capfdbinary):
    script = write_script(tmp_path, CRASH)
    rc, runtime = supervised(tmp_path, [sys.executable, str(script)], capture="both")
    assert rc == 1
    assert len(runtime.ledger.records) == 1
    assert runtime.pipeline.counters.deduplicated == 1


def test_structured_capture_keeps_stderr_byte_identical(tmp_path, capfdbinary):
    script = write_script(tmp_path, CRASH)
    bare = subprocess.run(
        [sys.executable, str(script)], capture_output=True, check=False
    )
    supervised(tmp_path, [sys.executable, str(script)], capture="structured")
    assert capfdbinary.readouterr().err == bare.stderr


# ----------------------------------------------------------- shim injection


def test_shim_injection_builds_child_environment(tmp_path):
    channel = tmp_path / "events.ndjson"
    injection = ShimInjection(channel)
    try:
        env = injection.child_env({"PYTHONPATH": "/existing"})
        first, rest = env["PYTHONPATH"].split(os.pathsep, 1)
        assert rest == "/existing"
        assert (Path(first) / "sitecustomize.py").exists()
        assert (Path(first) / "audible_trace_shim.py").exists()
        assert env["AUDIBLE_TRACE_EVENT_PATH"] == str(channel)
        assert channel.exists()
    finally:
        injection.cleanup()
    assert not (Path(first)).exists()


def test_shim_injection_without_existing_pythonpath(tmp_path):
    injection = ShimInjection(tmp_path / "ch.ndjson")
    try:
        env = injection.child_env({})
        assert os.pathsep not in env["PYTHONPATH"]
    finally:
        injection.cleanup()


# ----------------------------------------------------------- wire round trip


def test_event_to_wire_round_trips():
    cause = ExceptionEvent(
        exception_type="ValueError",
        message="bad literal",
        frames=[StackFrame(file="inner.py", line=4, function="parse", code_line="int(s)")],
        base_classes=["ValueError", "Exception"],
    )
    event = ExceptionEvent(
        exception_type="RuntimeError",
        message="wrapper",
        frames=[StackFrame(file="outer.py", line=9, function="main")],
        cause_chain=[cause],
        base_classes=["RuntimeError", "Exception"],
        source=ParseSource.STRUCTURED_HOOK,
        captured_at=1_700_000_000_123,
        thread="worker-1",
    )
    line = json.dumps(event_to_wire(event)).encode()
    back = parse_structured(line)
    assert back.exception_type == "RuntimeError"
    assert back.message == "wrapper"
    assert back.thread == "worker-1"
    assert back.captured_at == 1_700_000_000_123
    assert [f.as_dict() for f in back.frames] == [f.as_dict() for f in event.frames]
    assert len(back.cause_chain) == 1
    assert back.cause_chain[0].exception_type == "ValueError"
    assert back.cause_chain[0].frames[0].code_line == "int(s)"


# ----------------------------------------------------------- ingest


def wire_line(name: str, file: str = "app.py", line: int = 1, ts: str | None = None) -> bytes:
    doc = {
        "schema_version": 1,
        "type": name,
        "message": "m",
        "frames": [{"file": file, "line": line, "function": "f", "code_line": None}],
        "base_classes": [name, "Exception"],
        "cause_chain": [],
        "thread": None,
        "ts": ts or "2026-08-14T10:00:00.000Z",
    }
    return json.dumps(doc).encode()


def test_ingest_jsonl_counts_events_and_malformed(tmp_path):
    runtime = make_runtime(tmp_path)
    stream = io.BytesIO(
        wire_line("ValueError") + b"\n"
        + b"this is not json\n"
        + b"\n"
        + wire_line("KeyError", line=2) + b"\n"
    )
    try:
        result = ingest(stream, "jsonl", runtime)
    finally:
        runtime.close()
    assert result == {"events": 2, "narrated": 2, "malformed": 1}
    assert [r.exception for r in runtime.ledger.records] == ["ValueError", "KeyError"]


def test_ingest_counts_suggestion_as_narrated(tmp_path):
    runtime = make_runtime(tmp_path)
    lines = b"".join(wire_line("ValueError") + b"\n" for _ in range(4))
    try:
        result = ingest(io.BytesIO(lines), "jsonl", runtime)
    finally:
        runtime.close()
    assert result["events"] == 4
    assert result["narrated"] == 5  # four narrations plus the recurrence tip


def test_ingest_text_finds_tracebacks_in_mixed_log(tmp_path):
    log = (
        b"2026-08-14 10:00:00 INFO starting worker\n"
        b"Traceback (most recent call last):\n"
        b'  File "worker.py", line 12, in run\n'
        b"    process(item)\n"
        b'  File "worker.py", line 30, in process\n'
        b"    total += item['price']\n"
        b"KeyError: 'price'\n"
        b"2026-08-14 10:00:01 INFO retrying\n"
    )
    runtime = make_runtime(tmp_path)
    try:
        result = ingest(io.BytesIO(log), "text", runtime)
    finally:
        runtime.close()
    assert result == {"events": 1, "narrated": 1, "malformed": 0}
    record = runtime.ledger.records[0]
    assert record.exception == "KeyError"
    assert record.file == "worker.py"
    assert record.line == 30


def test_ingest_text_recovers_sentinel_hook_lines(tmp_path):
    log = (
        b"plain log line\n"
        + SENTINEL + wire_line("ValueError", file="svc.py", line=5) + b"\n"
        + SENTINEL + b"{broken payload\n"
        + b"another plain line\n"
    )
    runtime = make_runtime(tmp_path)
    try:
        result = ingest(io.BytesIO(log), "text", runtime)
    finally:
        runtime.close()
    assert result == {"events": 1, "narrated": 1, "malformed": 1}
    assert runtime.ledger.records[0].x.source == "structured_hook"


def test_ingest_text_handles_unterminated_tail(tmp_path):
    log = (
        b"Traceback (most recent call last):\n"
        b'  File "app.py", line 2, in <module>\n'
        b"    boom()\n"
        b"ValueError: no newline after this"
    )
    runtime = make_runtime(tmp_path)
    try:
        result = ingest(io.BytesIO(log), "text", runtime)
    finally:
        runtime.close()
    assert result["events"] == 1


def test_ingest_unknown_format_rejected(tmp_path):
    runtime = make_runtime(tmp_path)
    try:
        with pytest.raises(ConfigError, match="unknown ingest format"):
            ingest(io.BytesIO(b""), "xml", runtime)
    finally:
        runtime.close()


# ----------------------------------------------------------- replay


def recorded_file(tmp_path: Path, *ts_ms: int) -> Path:
    names = ["ValueError", "KeyError", "IndexError", "TypeError"]
    path = tmp_path / "session.ndjson"
    from audible_trace.timefmt import iso_millis

    with open(path, "w") as fh:
        for i, ts in enumerate(ts_ms):
            line = wire_line(names[i % len(names)], line=i + 1, ts=iso_millis(ts))
            fh.write(line.decode() + "\n")
    return path


def test_replay_reinjects_events(tmp_path):
    path = recorded_file(tmp_path, 1_000, 1_200, 1_900)
    runtime = make_runtime(tmp_path)
    try:
        result = replay(path, 1.0, runtime)
    finally:
        runtime.close()
    assert result["events"] == 3
    assert result["malformed"] == 0
    assert len(runtime.ledger.records) == 3
    for stage in result["stages"].values():
        assert stage["median_ms"] is not None
        assert stage["median_ms"] >= 0
        assert stage["max_ms"] >= stage["median_ms"]


def test_replay_resets_capture_time_to_now(tmp_path):
    path = recorded_file(tmp_path, 1_000)  # recorded in 1970
    runtime = make_runtime(tmp_path)
    try:
        replay(path, 1.0, runtime)
    finally:
        runtime.close()
    from audible_trace.timefmt import now_ms

    assert abs(runtime.ledger.records[0].timestamp_ms - now_ms()) < 60_000


def test_replay_sleeps_scaled_gaps(tmp_path, monkeypatch):
    gaps: list[float] = []
    monkeypatch.setattr("audible_trace.supervisor.time.sleep", gaps.append)

    cfg = SessionConfig(
        backend=Backend(kind=BackendKind.NULL, simulate_timing=True),
        ledger_path=tmp_path / "ledger.jsonl",
    )
    runtime = build_runtime(
        cfg, load_taxonomy(), make_template_set(), sleeper=lambda s: None
    )
    path = recorded_file(tmp_path, 10_000, 11_000, 11_250)
    try:
        replay(path, 2.0, runtime)
    finally:
        runtime.close()
    assert gaps == [0.5, 0.125]


def test_replay_skips_gaps_when_timing_disabled(tmp_path):
    path = recorded_file(tmp_path, 0, 3_600_000)  # an hour apart
    runtime = make_runtime(tmp_path, simulate_timing=False)
    start = time.monotonic()
    try:
        result = replay(path, 1.0, runtime)
    finally:
        runtime.close()
    assert time.monotonic() - start < 5
    assert result["events"] == 2


def test_replay_counts_malformed_lines(tmp_path):
    path = tmp_path / "session.ndjson"
    path.write_text(wire_line("ValueError").decode() + "\n" + "junk\n")
    runtime = make_runtime(tmp_path)
    try:
        result = replay(path, 1.0, runtime)
    finally:
        runtime.close()
    assert result["events"] == 1
    assert result["malformed"] == 1


@pytest.mark.parametrize("speed", [0, -1.5])
def test_replay_rejects_non_positive_speed(tmp_path, speed):
    runtime = make_runtime(tmp_path)
    try:
        with pytest.raises(ValueError, match="speed must be positive"):
            replay(tmp_path / "whatever.ndjson", speed, runtime)
    finally:
        runtime.close()


def test_replay_missing_file(tmp_path):
    runtime = make_runtime(tmp_path)
    try:
        with pytest.raises(FileUnreadable):
            replay(tmp_path / "absent.ndjson", 1.0, runtime)
    finally:
        runtime.close()


# ----------------------------------------------------------- session recording


def test_recorder_file_replays_into_fresh_session(tmp_path, capfdbinary):
    script = write_script(tmp_path, CRASH)
    record_path = tmp_path / "session.ndjson"
    recorder = SessionRecorder(record_path)
    runtime = make_runtime(tmp_path, on_commit=recorder)
    try:
        rc = run([sys.executable, str(script)], runtime)
    finally:
        runtime.close()
        recorder.close()
    assert rc == 1

    lines = record_path.read_text().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["schema_version"] == 1
    assert doc["type"] == "KeyError"

    fresh = make_runtime(tmp_path, ledger_name="second.jsonl")
    try:
        result = replay(record_path, 1.0, fresh)
    finally:
        fresh.close()
    assert result["events"] == 1
    assert fresh.ledger.records[0].exception == "KeyError"
