"""Command line entry point.

Subcommands: run (spawn and supervise a child program), ingest (feed a
traceback log or JSON-lines stream from stdin), replay (re-inject a recorded
session at a chosen speed), docs (print the documentation URL for an
exception name), stats (summarize a ledger file).

The dashboard service is imported lazily: a plain `run` must not pay the
web-stack import cost, since supervised wall-clock overhead is budgeted.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .config import build_session
from .errors import AudibleTraceError, ConfigError, FileUnreadable, PortBusy
from .ledger import ErrorLedger, gen_doc_url
from .supervisor import SessionRecorder, build_runtime
from . import supervisor
from .taxonomy import load_taxonomy

logger = logging.getLogger(__name__)

USAGE_EXIT = 2


def _session_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="YAML config file")
    parser.add_argument("--mode", choices=["standard", "dyslexia"], help="narration mode")
    parser.add_argument(
        "--backend", choices=["transcript", "command", "null"],
        help="speech backend (default transcript)",
    )
    parser.add_argument("--rate", type=int, metavar="WPM", help="base speech rate")
    parser.add_argument("--voice", metavar="V", help="voice identifier passed to the backend")
    parser.add_argument("--mute", action="store_true", default=None, help="suppress playback")
    parser.add_argument("--log", metavar="PATH", help="ledger file path")
    parser.add_argument("--transcript", metavar="PATH", help="transcript backend output file")
    parser.add_argument(
        "--command", metavar="TEMPLATE",
        help="external speech command; {text} {rate} {pitch} {voice} placeholders",
    )
    parser.add_argument(
        "--no-timing", action="store_true", default=None,
        help="do not simulate utterance durations (transcript/null backends)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audible-trace",
        description="Spoken error reporting for terminal programs.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v info, -vv debug diagnostics on stderr")
    sub = parser.add_subparsers(dest="cmd")

    p_run = sub.add_parser("run", help="run a program under supervision")
    _session_flags(p_run)
    p_run.add_argument("--capture", choices=["text", "structured", "both"],
                       help="capture route (default text)")
    p_run.add_argument("--serve", type=int, metavar="PORT",
                       help="host the dashboard on this port")
    p_run.add_argument("--host", metavar="ADDR", help="dashboard bind address (default loopback)")
    p_run.add_argument("--record", metavar="PATH", help="record captured events for replay")
    p_run.add_argument("--ui-dir", metavar="DIR", help="built dashboard assets to serve at /")
    p_run.add_argument("child", nargs=argparse.REMAINDER, metavar="-- CMD ARGS",
                       help="child command (after --)")

    p_ing = sub.add_parser("ingest", help="read tracebacks or JSON events from stdin")
    _session_flags(p_ing)
    p_ing.add_argument("--format", choices=["text", "jsonl"], default="text")
    p_ing.add_argument("file", nargs="?", default="-",
                       help="input file (default: standard input)")

    p_rep = sub.add_parser("replay", help="re-inject a recorded session")
    _session_flags(p_rep)
    p_rep.add_argument("file", help="recorded session file (JSON lines)")
    p_rep.add_argument("--speed", type=float, default=1.0, metavar="X",
                       help="time scale; 2 plays twice as fast")

    p_docs = sub.add_parser("docs", help="print the documentation URL for an exception")
    p_docs.add_argument("name", metavar="NAME")

    p_stats = sub.add_parser("stats", help="summarize a ledger file")
    p_stats.add_argument("--window", type=int, default=600, metavar="SECONDS",
                         help="hotspot window (default 600)")
    p_stats.add_argument("--log", metavar="PATH", help="ledger file path")
    p_stats.add_argument("--config", metavar="FILE", help="YAML config file")

    return parser


def _setup_logging(verbosity: int) -> None:
    # Default ERROR: the supervisor's own stderr carries forwarded child
    # bytes, so routine diagnostics stay off it unless asked for.
    level = {0: logging.ERROR, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="audible-trace %(levelname)s %(name)s: %(message)s")


def _session_settings(args: argparse.Namespace) -> dict:
    settings = {
        "mode": args.mode,
        "backend": args.backend,
        "rate": args.rate,
        "voice": args.voice,
        "mute": True if args.mute else None,
        "log": args.log,
        "transcript": args.transcript,
        "command": args.command,
        "simulate_timing": False if args.no_timing else None,
    }
    for key in ("capture", "serve", "host", "record", "ui_dir"):
        settings[key] = getattr(args, key, None)
    return settings


def _cmd_run(args: argparse.Namespace, child: list[str]) -> int:
    if not child:
        print("audible-trace run: missing child command (append -- CMD ARGS...)",
              file=sys.stderr)
        return USAGE_EXIT
    cfg, taxonomy, templates = build_session(
        _session_settings(args), config_path=args.config
    )
    recorder = SessionRecorder(cfg.record_path) if cfg.record_path else None
    runtime = build_runtime(cfg, taxonomy, templates, on_commit=recorder)
    server = None
    try:
        if cfg.serve_port is not None:
            from .service import DashboardServer  # heavy import, opt-in only

            server = DashboardServer(runtime, cfg.serve_port, cfg.bind_host,
                                     assets_dir=cfg.ui_dir)
            server.start()
        rc = supervisor.run(child, runtime)
        if server is not None:
            print(
                f"audible-trace: child exited {rc}; dashboard at "
                f"http://{cfg.bind_host}:{server.port}/ (Ctrl-C to stop)",
                file=sys.stderr,
            )
            try:
                while server.running:
                    time.sleep(0.5)
            except KeyboardInterrupt:
                pass
        return rc
    finally:
        if server is not None:
            server.stop()
        runtime.close(drain=True)
        if recorder is not None:
            recorder.close()


def _cmd_ingest(args: argparse.Namespace) -> int:
    cfg, taxonomy, templates = build_session(
        _session_settings(args), config_path=args.config
    )
    runtime = build_runtime(cfg, taxonomy, templates)
    stream = None
    try:
        if args.file == "-":
            stream = sys.stdin.buffer
        else:
            try:
                stream = open(args.file, "rb")
            except OSError as exc:
                raise FileUnreadable(f"cannot read input file: {exc}") from exc
        summary = supervisor.ingest(stream, args.format, runtime)
    finally:
        if stream is not None and stream is not sys.stdin.buffer:
            stream.close()
        runtime.close(drain=True)
    print(json.dumps(summary))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    if args.speed <= 0:
        print("audible-trace replay: --speed must be positive", file=sys.stderr)
        return USAGE_EXIT
    cfg, taxonomy, templates = build_session(
        _session_settings(args), config_path=args.config
    )
    runtime = build_runtime(cfg, taxonomy, templates)
    try:
        summary = supervisor.replay(args.file, args.speed, runtime)
    finally:
        runtime.close(drain=True)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_docs(args: argparse.Namespace) -> int:
    table = load_taxonomy()
    origin = "builtin" if args.name in table.builtin_names else "third_party"
    print(gen_doc_url(args.name, origin))
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    path = args.log
    if path is None and args.config:
        cfg, _, _ = build_session({}, config_path=args.config)
        path = cfg.ledger_path
    if path is None:
        from .config import DEFAULT_LEDGER

        path = DEFAULT_LEDGER
    ledger = ErrorLedger(path)
    print(json.dumps({
        "ledger": str(path),
        "total_records": len(ledger.records),
        "hotspots": ledger.hotspots(window_seconds=args.window),
    }, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    child: list[str] = []
    if "--" in argv:
        cut = argv.index("--")
        child = argv[cut + 1:]
        argv = argv[:cut]
    parser = _build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if args.cmd == "run" and not child:
        # `run CMD ARGS...` without the separator still works as long as the
        # child command is not mistakable for one of our flags.
        child = list(getattr(args, "child", []) or [])
        if child and child[0] == "--":
            child = child[1:]

    try:
        if args.cmd == "run":
            return _cmd_run(args, child)
        if args.cmd == "ingest":
            return _cmd_ingest(args)
        if args.cmd == "replay":
            return _cmd_replay(args)
        if args.cmd == "docs":
            return _cmd_docs(args)
        if args.cmd == "stats":
            return _cmd_stats(args)
    except PortBusy as exc:
        print(f"audible-trace: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"audible-trace: {exc}", file=sys.stderr)
        return 2
    except AudibleTraceError as exc:
        print(f"audible-trace: {exc}", file=sys.stderr)
        return 1
    parser.print_help()
    return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
