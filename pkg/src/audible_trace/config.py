"""Session configuration: CLI flags > environment > config file.

The config file is one YAML document with three optional sections:
session (flag defaults), taxonomy (name -> [family, severity] overrides),
and templates (name -> template string, plus "default"). A fourth optional
section, simplifications, extends the reading-support substitution table.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .gateway import Backend, BackendKind
from .narration import NarrationMode, TemplateSet, make_template_set
from .taxonomy import TaxonomyTable, load_taxonomy

logger = logging.getLogger(__name__)

DEFAULT_LEDGER = "audible-trace.jsonl"
DEFAULT_RATE_WPM = 160

ENV_PREFIX = "AUDIBLE_TRACE_"
# Environment knobs honored by the supervisor itself (the shim reads its own
# set, documented in that package).
ENV_KEYS = {
    "mode": "AUDIBLE_TRACE_MODE",
    "capture": "AUDIBLE_TRACE_CAPTURE",
    "backend": "AUDIBLE_TRACE_BACKEND",
    "rate": "AUDIBLE_TRACE_RATE",
    "voice": "AUDIBLE_TRACE_VOICE",
    "log": "AUDIBLE_TRACE_LOG",
    "mute": "AUDIBLE_TRACE_MUTE",
    "transcript": "AUDIBLE_TRACE_TRANSCRIPT",
    "command": "AUDIBLE_TRACE_COMMAND",
}


class CaptureMode:
    TEXT = "text"
    STRUCTURED = "structured"
    BOTH = "both"
    ALL = (TEXT, STRUCTURED, BOTH)


@dataclass
class SessionConfig:
    mode: NarrationMode = NarrationMode.STANDARD
    backend: Backend = field(default_factory=Backend)
    base_rate_wpm: int = DEFAULT_RATE_WPM
    voice: str = ""
    ledger_path: Path = Path(DEFAULT_LEDGER)
    serve_port: int | None = None
    capture: str = CaptureMode.TEXT
    mute: bool = False
    bind_host: str = "127.0.0.1"
    record_path: Path | None = None
    ui_dir: Path | None = None

    def validate(self) -> None:
        if self.base_rate_wpm <= 0:
            raise ConfigError("rate must be a positive wpm value")
        if self.capture not in CaptureMode.ALL:
            raise ConfigError(f"capture must be one of {CaptureMode.ALL}")
        if self.serve_port is not None and not (0 < self.serve_port < 65536):
            raise ConfigError("serve port must be a valid TCP port")


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys instead of keeping
    the last one silently."""


def _construct_mapping(loader: _StrictLoader, node: yaml.MappingNode, deep: bool = False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(f"duplicate key in config: {key!r}")
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep)


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def load_config_file(path: str | Path) -> dict:
    """Parse the YAML config document; ConfigError on any malformation."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        doc = yaml.load(text, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must contain a mapping at top level")
    unknown = set(doc) - {"session", "taxonomy", "templates", "simplifications"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _parse_bool(value: object) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off", ""):
            return False
    raise ConfigError(f"not a boolean: {value!r}")


def _merged_settings(cli: dict, env: dict, file_session: dict) -> dict:
    """Single dict of raw settings with CLI > environment > file."""
    merged: dict = {}
    for source in (file_session, env, cli):
        for key, value in source.items():
            if value is not None:
                merged[key] = value
    return merged


def _env_settings(environ: dict) -> dict:
    settings = {}
    for key, env_name in ENV_KEYS.items():
        if env_name in environ:
            settings[key] = environ[env_name]
    return settings


def build_session(
    cli: dict | None = None,
    *,
    environ: dict | None = None,
    config_path: str | Path | None = None,
) -> tuple[SessionConfig, TaxonomyTable, TemplateSet]:
    """Resolve the full session: config object, taxonomy, templates.

    cli holds flag values keyed by setting name with None meaning "not
    given". Unknown setting names are a programming error, not a user one.
    """
    cli = cli or {}
    environ = environ if environ is not None else dict(os.environ)
    file_doc = load_config_file(config_path) if config_path else {}
    file_session = file_doc.get("session") or {}
    if not isinstance(file_session, dict):
        raise ConfigError("session section must be a mapping")

    settings = _merged_settings(cli, _env_settings(environ), file_session)

    cfg = SessionConfig()
    if "mode" in settings:
        try:
            cfg.mode = NarrationMode(str(settings["mode"]).lower())
        except ValueError:
            raise ConfigError(f"unknown mode: {settings['mode']!r}") from None
    if "capture" in settings:
        cfg.capture = str(settings["capture"]).lower()
    if "rate" in settings:
        try:
            cfg.base_rate_wpm = int(settings["rate"])
        except (TypeError, ValueError):
            raise ConfigError(f"rate must be an integer: {settings['rate']!r}") from None
    if "voice" in settings:
        cfg.voice = str(settings["voice"])
    if "log" in settings:
        cfg.ledger_path = Path(str(settings["log"]))
    if "serve" in settings and settings["serve"] is not None:
        try:
            cfg.serve_port = int(settings["serve"])
        except (TypeError, ValueError):
            raise ConfigError(f"serve port must be an integer: {settings['serve']!r}") from None
    if "mute" in settings:
        cfg.mute = _parse_bool(settings["mute"])
    if "host" in settings:
        cfg.bind_host = str(settings["host"])
    if "record" in settings and settings["record"] is not None:
        cfg.record_path = Path(str(settings["record"]))
    if "ui_dir" in settings and settings["ui_dir"] is not None:
        cfg.ui_dir = Path(str(settings["ui_dir"]))

    backend_kind = str(settings.get("backend", "transcript")).lower()
    if backend_kind in ("command", "external_command"):
        kind = BackendKind.EXTERNAL_COMMAND
    elif backend_kind == "null":
        kind = BackendKind.NULL
    elif backend_kind == "transcript":
        kind = BackendKind.TRANSCRIPT
    else:
        raise ConfigError(f"unknown backend: {backend_kind!r}")

    transcript = settings.get("transcript")
    command = settings.get("command")
    if kind is BackendKind.EXTERNAL_COMMAND and not command:
        raise ConfigError("backend 'command' requires a command template")
    cfg.backend = Backend(
        kind=kind,
        transcript_path=Path(str(transcript)) if transcript else None,
        command=str(command) if command else None,
        voice=cfg.voice,
        simulate_timing=_parse_bool(settings.get("simulate_timing", True)),
    )
    cfg.validate()

    taxonomy = load_taxonomy(file_doc.get("taxonomy"))
    templates = make_template_set(
        file_doc.get("templates"),
        simplifications=_parse_simplifications(file_doc.get("simplifications")),
    )
    return cfg, taxonomy, templates


def _parse_simplifications(raw: object) -> dict | None:
    if raw is None:
        return None
    if not isinstance(raw, list):
        raise ConfigError("simplifications section must be a list")
    table = {}
    for item in raw:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("type"), str)
            or not isinstance(item.get("message"), str)
            or not isinstance(item.get("replacement"), str)
        ):
            raise ConfigError(
                "each simplification needs string fields type, message, replacement"
            )
        table[(item["type"], item["message"])] = item["replacement"]
    return table
