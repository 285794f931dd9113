"""Shipping gates: one test per externally promised budget or contract.

Each test is a single pass/fail verdict. Quantitative results (fidelity
counts, latency medians, overhead percentage) are printed with capture
suspended so the numbers are visible even on green runs.
"""
from __future__ import annotations

import json
import random
import re
import subprocess
import sys
import time

import pytest

from conftest import CommitLog, make_runtime
from corpus import MIN_SCRIPTS, MIN_TYPES, clean_cases, failing_cases

from audible_trace.gateway import BackendKind
from audible_trace.ledger import (
    DOC_BASE,
    RECURRENCE_THRESHOLD,
    WINDOW_SECONDS,
    ErrorLedger,
    RecurrenceWindow,
    Signature,
    gen_doc_url,
)
from audible_trace.narration import (
    NarrationMode,
    plan_prosody,
    render_message,
    render_suggestion,
)
from audible_trace.supervisor import run
from audible_trace.taxonomy import Classification, Family, MatchRule, Severity, classify, load_taxonomy
from audible_trace.timefmt import iso_millis
from audible_trace.traceparse import ExceptionEvent, StackFrame

FIDELITY_BUDGET_S = 120
LATENCY_BUDGET_S = 300
LATENCY_MEDIAN_S = 0.7
OVERHEAD_BUDGET = 0.05


@pytest.fixture
def announce(capfd):
    """Print measurements past the capture layer so green runs show them."""

    def _say(message: str) -> None:
        with capfd.disabled():
            print(f"\n[acceptance] {message}", flush=True)

    return _say


def _innermost(event: ExceptionEvent):
    frame = event.innermost
    if frame is None:
        return None
    return (frame.file, frame.line, frame.function)


def _supervise_once(workdir, script, route: str):
    """One supervised child run; returns (exit_code, committed events)."""
    log = CommitLog()
    runtime = make_runtime(
        workdir, capture=route, backend_kind=BackendKind.NULL, on_commit=log
    )
    try:
        rc = run([sys.executable, str(script)], runtime)
        runtime.gateway.wait_idle(timeout=10)
    finally:
        runtime.close()
    return rc, log.events, len(runtime.ledger.records)


# ---------------------------------------------------------------- fidelity


def test_capture_fidelity_routes_agree_with_no_misses_or_duplicates(
    corpus_dir, corpus_cases, tmp_path, announce
):
    started = time.monotonic()
    failing = failing_cases(corpus_cases)
    clean = clean_cases(corpus_cases)
    assert len(corpus_cases) >= MIN_SCRIPTS
    assert len({c.expect_type for c in failing}) >= MIN_TYPES
    # the hard shapes must be present, not just a count of easy raisers
    assert any(c.syntax for c in failing)
    assert any(c.threaded for c in failing)
    assert any(c.name.startswith("chain_") for c in failing)

    problems: list[str] = []
    mismatches: list[str] = []
    for case in failing:
        script = corpus_dir / f"{case.name}.py"
        captured = {}
        for route in ("text", "structured"):
            _, events, stored = _supervise_once(
                tmp_path / f"{case.name}-{route}", script, route
            )
            if stored != 1 or len(events) != 1:
                problems.append(f"{case.name}/{route}: {stored} records, {len(events)} events")
                captured[route] = None
            else:
                captured[route] = events[0]
        text_ev, hook_ev = captured["text"], captured["structured"]
        if text_ev is None or hook_ev is None:
            continue
        text_key = (
            text_ev.exception_type, text_ev.message,
            text_ev.frame_count, _innermost(text_ev),
        )
        hook_key = (
            hook_ev.exception_type, hook_ev.message,
            hook_ev.frame_count, _innermost(hook_ev),
        )
        if text_ev.exception_type != case.expect_type:
            problems.append(f"{case.name}: expected {case.expect_type}, parsed {text_ev.exception_type}")
        if text_key != hook_key:
            mismatches.append(f"{case.name}: text={text_key} structured={hook_key}")

    for case in clean:
        script = corpus_dir / f"{case.name}.py"
        for route in ("text", "structured"):
            _, _, stored = _supervise_once(
                tmp_path / f"{case.name}-{route}", script, route
            )
            if stored != 0:
                problems.append(f"{case.name}/{route}: phantom record on clean run")

    elapsed = time.monotonic() - started
    assert problems == [], "\n".join(problems)
    assert mismatches == [], "\n".join(mismatches)
    assert elapsed < FIDELITY_BUDGET_S
    announce(
        f"fidelity: {len(failing)} failing + {len(clean)} clean scripts, "
        f"{len({c.expect_type for c in failing})} exception types, "
        f"both routes agree 100%, {elapsed:.1f}s"
    )


# ---------------------------------------------------------------- latency


def test_latency_median_within_budget_per_complexity_bucket(tmp_path, announce):
    started = time.monotonic()
    rng = random.Random(20260814)
    frame_counts = [1, 2, 3, 5, 8, 9, 10, 14, 25]
    types = ["ValueError", "KeyError", "TypeError", "OSError", "RuntimeError"]

    session = tmp_path / "session.ndjson"
    with open(session, "w", encoding="utf-8") as fh:
        for i in range(200):
            depth = frame_counts[i % len(frame_counts)]
            # unique innermost (file, line) per event so no signature recurs
            frames = [
                {"file": f"layer{d}.py", "line": i + 1, "function": f"fn{d}",
                 "code_line": None}
                for d in range(depth)
            ]
            doc = {
                "schema_version": 1,
                "type": rng.choice(types),
                "message": f"failure {i}",
                "frames": frames,
                "base_classes": ["Exception"],
                "cause_chain": [],
                "thread": None,
                "ts": iso_millis(1_700_000_000_000 + i * 5),
            }
            fh.write(json.dumps(doc) + "\n")

    from audible_trace.supervisor import replay

    runtime = make_runtime(
        tmp_path,
        backend_kind=BackendKind.TRANSCRIPT,
        transcript=tmp_path / "speech.tsv",
        simulate_timing=False,
    )
    try:
        result = replay(session, 1.0, runtime)
    finally:
        runtime.close()

    elapsed = time.monotonic() - started
    assert result["events"] == 200
    report = result["latency"]
    assert report is not None, "no latency samples were collected"
    summary = []
    for bucket in ("simple", "moderate", "complex"):
        stats = report["buckets"][bucket]
        assert stats["count"] > 0, f"{bucket} bucket never exercised"
        assert stats["median_s"] <= LATENCY_MEDIAN_S, (
            f"{bucket} median {stats['median_s']:.3f}s exceeds {LATENCY_MEDIAN_S}s"
        )
        summary.append(f"{bucket} {stats['median_s'] * 1000:.0f}ms/n={stats['count']}")
    assert elapsed < LATENCY_BUDGET_S
    announce(f"latency medians: {', '.join(summary)}; replay took {elapsed:.1f}s")


# ---------------------------------------------------------------- overhead


def test_supervision_overhead_within_five_percent(corpus_dir, corpus_cases, tmp_path, announce):
    clean = clean_cases(corpus_cases)
    scripts = [corpus_dir / f"{c.name}.py" for c in clean]
    runtime = make_runtime(tmp_path, backend_kind=BackendKind.NULL)

    def bare_once(script) -> float:
        t0 = time.perf_counter()
        subprocess.run([sys.executable, str(script)], capture_output=True, check=False)
        return time.perf_counter() - t0

    def supervised_once(script) -> float:
        t0 = time.perf_counter()
        run([sys.executable, str(script)], runtime)
        return time.perf_counter() - t0

    try:
        for script in scripts:  # warm caches on both paths
            bare_once(script)
            supervised_once(script)

        reps = 7
        bare_best = {s: float("inf") for s in scripts}
        sup_best = {s: float("inf") for s in scripts}
        for _ in range(reps):
            for script in scripts:
                bare_best[script] = min(bare_best[script], bare_once(script))
                sup_best[script] = min(sup_best[script], supervised_once(script))
    finally:
        runtime.close()

    bare_total = sum(bare_best.values())
    sup_total = sum(sup_best.values())
    overhead = (sup_total - bare_total) / bare_total
    announce(
        f"overhead: {overhead:+.2%} "
        f"(bare {bare_total:.3f}s vs supervised {sup_total:.3f}s over {len(scripts)} clean scripts)"
    )
    assert overhead <= OVERHEAD_BUDGET, (
        f"supervision overhead {overhead:+.2%} exceeds {OVERHEAD_BUDGET:.0%} "
        f"(bare {bare_total:.3f}s, supervised {sup_total:.3f}s)"
    )


# ---------------------------------------------------------------- narration goldens


def test_narration_goldens_byte_exact(announce):
    warn = Classification(Family.LOGICAL_FLAWS, Severity.WARNING, MatchRule.EXACT_NAME)

    zero_div = ExceptionEvent(
        exception_type="ZeroDivisionError",
        message="float division",
        frames=[StackFrame(file="/srv/app/data_processor.py", line=188, function="process")],
    )
    assert render_message(zero_div, warn) == (
        "ZeroDivisionError: float division in data_processor.py line 188"
    )

    key_missing = ExceptionEvent(
        exception_type="KeyError",
        message="'invalid'",
        frames=[StackFrame(file="/srv/app/data_processor.py", line=88, function="lookup")],
    )
    assert render_message(key_missing, warn) == (
        "KeyError: 'invalid' key missing in dictionary at data_processor.py line 88"
    )

    assert render_suggestion("SomethingNovelError", 4, "10 minutes") == (
        "Recurring error: Consider adding try-except block"
    )
    announce("narration goldens: 3/3 byte-exact")


# ---------------------------------------------------------------- prosody table


def test_prosody_table_exact_and_dyslexia_pacing(announce):
    table = {
        Severity.CRITICAL: (150, 1.25),
        Severity.HIGH: (75, 1.10),
        Severity.WARNING: (0, 1.00),
        Severity.INFO: (-50, 0.85),
    }
    text = "First sentence here. Second sentence follows."
    for severity, (pitch, rate) in table.items():
        cls = Classification(Family.SYSTEM_ERRORS, severity, MatchRule.EXACT_NAME)
        plan = plan_prosody(text, cls)
        assert len(plan.chunks) == 2
        for chunk in plan.chunks:
            assert chunk.pitch_shift_cents == pitch
            assert chunk.rate_multiplier == rate
        assert plan.chunks[0].pause_after_ms == 300
        assert plan.chunks[-1].pause_after_ms == 0
        assert plan.alert_tone_ms == (300 if severity is Severity.CRITICAL else 0)

    cls = Classification(Family.LOGICAL_FLAWS, Severity.WARNING, MatchRule.EXACT_NAME)
    plan = plan_prosody("four plain words here", cls, NarrationMode.DYSLEXIA, 160)
    assert [c.text for c in plan.chunks] == ["four", "plain", "words", "here"]
    for chunk in plan.chunks[:-1]:
        assert chunk.pause_after_ms == 500
    assert plan.chunks[-1].pause_after_ms == 0
    for chunk in plan.chunks:
        assert chunk.rate_multiplier == pytest.approx(120 / 160)
        assert chunk.pitch_shift_cents == 0
    announce("prosody: 4 severity rows exact; dyslexia 120 wpm / 500 ms pauses")


# ---------------------------------------------------------------- recurrence


class _BruteRecurrence:
    def __init__(self) -> None:
        self.events: list[float] = []
        self.last: float | None = None

    def observe(self, t: float) -> None:
        self.events.append(t)

    def count(self, now: float) -> int:
        return sum(1 for t in self.events if now - WINDOW_SECONDS < t <= now)

    def check(self, now: float) -> bool:
        if self.count(now) < RECURRENCE_THRESHOLD:
            return False
        if self.last is not None and (now - self.last) < WINDOW_SECONDS:
            return False
        self.last = now
        return True


def test_recurrence_matches_brute_force_on_1000_sequences(announce):
    rng = random.Random(600_600)
    sig = Signature("KeyError", "app.py", 7)
    # Deltas saturate the exact window width so boundary times occur in
    # nearly every sequence.
    deltas = [0.0, 1.0, 30.0, 299.0, 300.0, 599.0, 600.0, 601.0, 1200.0]
    checks_run = 0
    for seq in range(1000):
        window = RecurrenceWindow()
        brute = _BruteRecurrence()
        now = 1000.0
        for _ in range(rng.randrange(5, 40)):
            now += rng.choice(deltas)
            if rng.random() < 0.5:
                window.observe(sig, now)
                brute.observe(now)
            else:
                checks_run += 1
                assert window.count(sig, now) == brute.count(now), f"sequence {seq}"
                assert window.check(sig, now) == brute.check(now), f"sequence {seq}"
    announce(f"recurrence: 1000 sequences, {checks_run} checks, zero divergence")


# ---------------------------------------------------------------- ledger format

LEDGER_CORE_KEYS = ["timestamp", "exception", "message", "file", "line", "frequency", "resolution"]
TIMESTAMP_SHAPE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")


def test_ledger_record_format_and_round_trip(tmp_path, announce):
    path = tmp_path / "errors.jsonl"
    ledger = ErrorLedger(path)
    table = load_taxonomy()
    specimens = [
        ("ZeroDivisionError", "division by zero", "app.py", 10, 1),
        ("KeyError", "'k'", "io.py", 2, 3),
        ("MemoryError", "", "big.py", 999, 12),
        ("ZeroDivisionError", "division by zero", "app.py", 10, 1),  # repeat signature
    ]
    for name, message, file, line, depth in specimens:
        frames = [StackFrame(file=file, line=line, function="f")] * depth
        event = ExceptionEvent(
            exception_type=name, message=message, frames=frames,
            captured_at=1_700_000_000_000,
        )
        ledger.append(event, classify(event, table))
    ledger.set_resolution(2, "renamed the key")

    for raw in path.read_text(encoding="utf-8").splitlines():
        doc = json.loads(raw)
        if "amend" in doc:
            continue
        assert list(doc)[:7] == LEDGER_CORE_KEYS
        assert TIMESTAMP_SHAPE.match(doc["timestamp"])

    reloaded = ErrorLedger(path)
    assert [r.as_dict() for r in reloaded.records] == [r.as_dict() for r in ledger.records]
    assert reloaded.get(2).resolution == "renamed the key"
    assert reloaded.get(4).frequency == 2
    announce(f"ledger: {len(specimens)} records round-trip, 7 core keys in order")


# ---------------------------------------------------------------- doc links


def test_doc_links_for_every_builtin_in_table(announce):
    table = load_taxonomy()
    assert len(table.builtin_names) >= 60
    for name in sorted(table.builtin_names):
        assert gen_doc_url(name) == DOC_BASE + name.lower(), name
    announce(f"doc links: {len(table.builtin_names)} builtin names map to lowercase anchors")


# ---------------------------------------------------------------- transparency


def test_transparency_byte_diff_and_exit_codes_across_corpus(
    corpus_dir, corpus_cases, tmp_path, capfdbinary
):
    diffs: list[str] = []
    for case in corpus_cases:
        script = corpus_dir / f"{case.name}.py"
        bare = subprocess.run(
            [sys.executable, str(script)], capture_output=True, check=False
        )
        expected_rc = 128 - bare.returncode if bare.returncode < 0 else bare.returncode

        capfdbinary.readouterr()  # drain anything stale
        runtime = make_runtime(tmp_path / case.name, backend_kind=BackendKind.NULL)
        try:
            rc = run([sys.executable, str(script)], runtime)
        finally:
            runtime.close()
        forwarded = capfdbinary.readouterr()

        if forwarded.out != bare.stdout:
            diffs.append(f"{case.name}: stdout differs")
        if forwarded.err != bare.stderr:
            diffs.append(f"{case.name}: stderr differs")
        if rc != expected_rc:
            diffs.append(f"{case.name}: exit {rc} != {expected_rc}")
    assert diffs == [], "\n".join(diffs)
    with capfdbinary.disabled():
        print(
            f"\n[acceptance] transparency: {len(corpus_cases)} scripts "
            "byte-identical with matching exit codes",
            flush=True,
        )
