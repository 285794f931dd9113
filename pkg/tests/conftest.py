from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus import CorpusCase, write_corpus  # noqa: E402

from audible_trace.config import CaptureMode, SessionConfig
from audible_trace.gateway import Backend, BackendKind
from audible_trace.narration import NarrationMode
from audible_trace.supervisor import Runtime, build_runtime
from audible_trace.config import build_session  # noqa: F401  (re-export for tests)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root)
    return root


@pytest.fixture(scope="session")
def corpus_cases(corpus_dir) -> list[CorpusCase]:
    from corpus import build_cases

    return build_cases()


def make_runtime(
    tmp_path: Path,
    *,
    capture: str = CaptureMode.TEXT,
    mode: NarrationMode = NarrationMode.STANDARD,
    backend_kind: BackendKind = BackendKind.TRANSCRIPT,
    transcript: Path | None = None,
    simulate_timing: bool = False,
    mute: bool = False,
    ledger_name: str = "ledger.jsonl",
    on_commit=None,
) -> Runtime:
    """In-process runtime with fast defaults: no simulated playback time."""
    from audible_trace.narration import make_template_set
    from audible_trace.taxonomy import load_taxonomy

    cfg = SessionConfig(
        mode=mode,
        backend=Backend(kind=backend_kind, transcript_path=transcript,
                        simulate_timing=simulate_timing),
        ledger_path=tmp_path / ledger_name,
        capture=capture,
        mute=mute,
    )
    cfg.validate()
    return build_runtime(cfg, load_taxonomy(), make_template_set(), on_commit=on_commit)


class CommitLog:
    """on_commit hook that keeps (event, record) pairs for assertions."""

    def __init__(self) -> None:
        self.entries = []

    def __call__(self, event, record) -> None:
        self.entries.append((event, record))

    @property
    def events(self):
        return [e for e, _ in self.entries]

    @property
    def records(self):
        return [r for _, r in self.entries]
