"""In-process exception capture hook for supervised child programs.

Installs wrappers around sys.excepthook and threading.excepthook that
serialize each unhandled exception as one JSON line (the version-1 wire
schema) and then defer to the original hooks, so the process's own stderr
output and exit behavior are untouched.

Events go to the NDJSON file named by AUDIBLE_TRACE_EVENT_PATH when set;
without a channel they are emitted as sentinel-prefixed lines on stderr so
log-ingest tooling can recover them. AUDIBLE_TRACE_DISABLE=1 turns the
whole module into a no-op.

Only the standard library is used; the module works on any CPython >= 3.8
regardless of what the supervised program has installed.
"""
from __future__ import annotations

import json
import os
import sys
import threading
import time
import traceback

SCHEMA_VERSION = 1
SENTINEL = "##AUDIBLE-TRACE-EVENT## "

ENV_CHANNEL = "AUDIBLE_TRACE_EVENT_PATH"
ENV_DISABLE = "AUDIBLE_TRACE_DISABLE"
ENV_RATE = "AUDIBLE_TRACE_RATE"
ENV_VOICE = "AUDIBLE_TRACE_VOICE"

MAX_CHAIN_DEPTH = 16

_emit_lock = threading.Lock()
_state: dict = {"installed": False, "channel": None, "settings": {}}


def _iso_now() -> str:
    ns = time.time_ns()
    secs, ms = divmod(ns // 1_000_000, 1000)
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(secs)) + ".%03dZ" % ms


def _final_line(exc_type, value) -> str:
    """The last rendered line of the stock traceback output.

    Deriving type and message from the renderer's own text keeps this
    channel byte-consistent with what a text-mode parser reads off stderr.
    """
    try:
        rendered = traceback.format_exception_only(exc_type, value)
        if rendered:
            return rendered[-1].rstrip("\n")
    except Exception:
        pass
    try:
        return getattr(exc_type, "__name__", "Exception")
    except Exception:
        return "Exception"


def _split_final_line(line: str) -> tuple[str, str]:
    if ": " in line:
        name, message = line.split(": ", 1)
        return name, message
    if line.endswith(":"):
        return line[:-1], ""
    return line, ""


def _frames_of(exc_type, value, tb) -> list:
    frames = []
    try:
        for fs in traceback.extract_tb(tb):
            frames.append(
                {
                    "file": fs.filename,
                    "line": int(fs.lineno or 0) or 1,
                    "function": fs.name or "<module>",
                    "code_line": fs.line or None,
                }
            )
    except Exception:
        pass
    # The renderer appends the offending location of a SyntaxError as its
    # own File record; mirror it as an innermost frame so both capture
    # routes report the same frame list.
    try:
        if isinstance(value, SyntaxError) and value.filename and value.lineno:
            frames.append(
                {
                    "file": value.filename,
                    "line": int(value.lineno),
                    "function": "<module>",
                    "code_line": value.text.strip() if value.text else None,
                }
            )
    except Exception:
        pass
    return frames


def _event_doc(exc_type, value, tb) -> dict:
    name, message = _split_final_line(_final_line(exc_type, value))
    try:
        bases = [c.__name__ for c in exc_type.__mro__[1:] if c is not object]
    except Exception:
        bases = []
    return {
        "type": name,
        "message": message,
        "frames": _frames_of(exc_type, value, tb),
        "base_classes": bases,
    }


def _cause_chain(value) -> list:
    """Earlier causes first, mirroring the order tracebacks print in."""
    chain = []
    seen = {id(value)}
    current = value
    for _ in range(MAX_CHAIN_DEPTH):
        if current.__cause__ is not None:
            nxt = current.__cause__
        elif current.__context__ is not None and not current.__suppress_context__:
            nxt = current.__context__
        else:
            break
        if id(nxt) in seen:
            break
        seen.add(id(nxt))
        chain.append(_event_doc(type(nxt), nxt, nxt.__traceback__))
        current = nxt
    chain.reverse()
    return chain


def _emit(exc_type, value, tb, thread_name: str | None) -> None:
    try:
        doc = _event_doc(exc_type, value, tb)
        doc["schema_version"] = SCHEMA_VERSION
        doc["cause_chain"] = _cause_chain(value) if value is not None else []
        doc["thread"] = thread_name or threading.current_thread().name
        doc["ts"] = _iso_now()
        line = json.dumps(doc, ensure_ascii=False)
        channel = _state.get("channel")
        with _emit_lock:
            if channel:
                with open(channel, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
            else:
                sys.stderr.write(SENTINEL + line + "\n")
                sys.stderr.flush()
    except Exception:
        # Capture must never alter the dying program's behavior.
        pass


def _install_hooks() -> None:
    original_excepthook = sys.excepthook

    def excepthook(exc_type, value, tb):
        _emit(exc_type, value, tb, None)
        original_excepthook(exc_type, value, tb)

    sys.excepthook = excepthook

    original_thread_hook = threading.excepthook

    def thread_hook(args):
        if args.exc_type is not SystemExit:
            name = args.thread.name if args.thread is not None else None
            _emit(args.exc_type, args.exc_value, args.exc_traceback, name)
        original_thread_hook(args)

    threading.excepthook = thread_hook


def enable_voice_errors(
    speech_rate: int = 160,
    voice_gender: str = "female",
    channel: str | None = None,
) -> bool:
    """Turn on exception capture for this process.

    speech_rate and voice_gender are recorded as session settings for the
    consuming supervisor (this process emits events, it does not speak).
    channel overrides the AUDIBLE_TRACE_EVENT_PATH destination. Returns
    True when hooks are installed (idempotent), False when disabled.
    """
    if os.environ.get(ENV_DISABLE, "") == "1":
        return False
    _state["settings"] = {"speech_rate": speech_rate, "voice_gender": voice_gender}
    _state["channel"] = channel or os.environ.get(ENV_CHANNEL) or None
    if not _state["installed"]:
        _install_hooks()
        _state["installed"] = True
    return True


def auto_inject() -> bool:
    """Entry point for interpreter-startup injection.

    Activates only when a channel path is present in the environment, so a
    stray copy of this module never writes sentinel noise to stderr.
    """
    if os.environ.get(ENV_DISABLE, "") == "1":
        return False
    if not os.environ.get(ENV_CHANNEL):
        return False
    rate = 160
    try:
        rate = int(os.environ.get(ENV_RATE, "160"))
    except ValueError:
        pass
    return enable_voice_errors(
        speech_rate=rate, voice_gender=os.environ.get(ENV_VOICE, "female")
    )
