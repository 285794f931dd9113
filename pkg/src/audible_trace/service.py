"""Local HTTP API and live event stream over one session.

The service reads the ledger and pipeline owned by the supervisor; its only
writers are the resolution and narrate endpoints, both funneled through the
same single-writer structures the capture path uses. Server-sent events fan
out from the pipeline bus with a bounded per-client buffer.
"""
from __future__ import annotations

import errno
import json
import logging
import socket
import threading
from pathlib import Path

import uvicorn
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .errors import NotFound, PortBusy
from .ledger import LedgerRecord, doc_url_for
from .pipeline import Pipeline
from .supervisor import Runtime
from .timefmt import parse_since
from .traceparse import ExceptionEvent, ParseSource, StackFrame, extract_context

logger = logging.getLogger(__name__)

SSE_HEARTBEAT_S = 15.0
SSE_POLL_S = 0.25


def _api_error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"status": status, "code": code, "detail": detail},
    )


def _record_payload(record: LedgerRecord) -> dict:
    return record.as_dict()


def _event_from_record(record: LedgerRecord) -> ExceptionEvent:
    frames = [
        StackFrame(
            file=f.get("file", ""),
            line=f.get("line", 0) or 0,
            function=f.get("function", "<module>"),
            code_line=f.get("code_line"),
        )
        for f in record.x.frames
        if isinstance(f, dict) and f.get("file") and (f.get("line") or 0) >= 1
    ]
    return ExceptionEvent(
        exception_type=record.exception,
        message=record.message,
        frames=frames,
        source=ParseSource.PARSED_TEXT,
        event_id=record.x.id,
    )


def create_app(runtime: Runtime, assets_dir: str | Path | None = None) -> FastAPI:
    ledger = runtime.ledger
    pipeline: Pipeline = runtime.pipeline
    app = FastAPI(title="audible-trace dashboard", docs_url=None, redoc_url=None)

    @app.exception_handler(NotFound)
    async def _not_found(request: Request, exc: NotFound):
        return _api_error(404, "NotFound", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _bad_request(request: Request, exc: RequestValidationError):
        return _api_error(400, "BadRequest", str(exc))

    @app.exception_handler(Exception)
    async def _internal(request: Request, exc: Exception):
        logger.exception("request failed")
        return _api_error(500, "Internal", str(exc))

    @app.get("/api/errors")
    def list_errors(
        type: str | None = None,
        file: str | None = None,
        since: str | None = None,
        resolved: bool | None = None,
        offset: int = 0,
        limit: int = 50,
    ):
        since_ms = None
        if since is not None:
            try:
                since_ms = parse_since(since)
            except ValueError as exc:
                return _api_error(400, "BadRequest", str(exc))
        if offset < 0 or limit < 0:
            return _api_error(400, "BadRequest", "offset and limit must be non-negative")
        records, total = ledger.query(
            type=type, file=file, since=since_ms, resolved=resolved,
            offset=offset, limit=limit,
        )
        return {
            "records": [_record_payload(r) for r in records],
            "total": total,
            "offset": offset,
            "limit": limit,
        }

    @app.get("/api/errors/{record_id}")
    def get_error(record_id: int):
        return _record_payload(ledger.get(record_id))

    @app.get("/api/errors/{record_id}/context")
    def get_context(record_id: int):
        record = ledger.get(record_id)
        event = _event_from_record(record)
        frame = event.innermost
        snippet = None
        if frame is not None:
            ctx = extract_context(frame)
            snippet = {
                "lines": [{"line": n, "text": t, "error": n == ctx.error_line} for n, t in ctx.lines],
                "error_line": ctx.error_line,
                "reason": ctx.reason,
            }
        else:
            snippet = {"lines": [], "error_line": 0, "reason": "no frames captured"}
        return {
            "record": _record_payload(record),
            "snippet": snippet,
            "doc_links": [doc_url_for(event, runtime.taxonomy.builtin_names)],
        }

    @app.post("/api/errors/{record_id}/resolution")
    async def post_resolution(record_id: int, request: Request):
        try:
            body = await request.json()
        except Exception:
            return _api_error(400, "BadRequest", "body must be JSON")
        if not isinstance(body, dict) or not isinstance(body.get("resolution"), str):
            return _api_error(400, "BadRequest", 'body must be {"resolution": text}')
        text = body["resolution"].strip()
        if not text:
            return _api_error(400, "BadRequest", "resolution must be non-empty")
        record = ledger.set_resolution(record_id, text)
        return _record_payload(record)

    @app.post("/api/errors/{record_id}/narrate")
    def post_narrate(record_id: int):
        utterance = pipeline.narrate_record(record_id)
        return {"record_id": record_id, "utterance": utterance.as_dict()}

    @app.get("/api/stats")
    def get_stats(window: int = 600):
        try:
            latency = runtime.gateway.latency_report()
        except Exception:
            latency = None
        return {
            "hotspots": ledger.hotspots(window_seconds=window),
            "latency": latency,
            "counters": pipeline.counters.as_dict(),
            "total_records": len(ledger.records),
        }

    @app.get("/api/stream")
    def stream(request: Request):
        client = pipeline.bus.subscribe()

        def gen():
            try:
                yield ": connected\n\n"
                idle = 0.0
                while True:
                    item = client.get(timeout=SSE_POLL_S)
                    dropped = client.take_dropped()
                    if dropped:
                        yield f"event: dropped\ndata: {json.dumps({'count': dropped})}\n\n"
                    if item is None:
                        idle += SSE_POLL_S
                        if idle >= SSE_HEARTBEAT_S:
                            idle = 0.0
                            yield ": keep-alive\n\n"
                        continue
                    idle = 0.0
                    name, data = item
                    payload = json.dumps(data, ensure_ascii=False)
                    yield f"event: {name}\ndata: {payload}\n\n"
            finally:
                pipeline.bus.unsubscribe(client)

        return StreamingResponse(gen(), media_type="text/event-stream")

    placeholder = (
        "<!doctype html><meta charset='utf-8'><title>audible-trace</title>"
        "<h1>audible-trace dashboard</h1>"
        "<p>No UI build found. The API lives under <code>/api/</code>; "
        "build the frontend package and pass its dist directory to serve "
        "the full dashboard.</p>"
    )

    if assets_dir is not None and Path(assets_dir).is_dir():
        index = Path(assets_dir) / "index.html"

        @app.get("/")
        def root():
            if index.exists():
                return FileResponse(index)
            return JSONResponse(content={"detail": "index.html missing"}, status_code=404)

        app.mount("/", StaticFiles(directory=str(assets_dir), html=True), name="assets")
    else:

        @app.get("/")
        def root_placeholder():
            from fastapi.responses import HTMLResponse

            return HTMLResponse(placeholder)

    return app


class DashboardServer:
    """uvicorn in a daemon thread, bound before the thread starts so port
    conflicts surface synchronously as PortBusy."""

    def __init__(self, runtime: Runtime, port: int, host: str = "127.0.0.1",
                 assets_dir: str | Path | None = None) -> None:
        self.app = create_app(runtime, assets_dir=assets_dir)
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            sock.close()
            if exc.errno == errno.EADDRINUSE:
                raise PortBusy(f"port {port} is already in use") from exc
            raise
        sock.listen(128)
        self._sock = sock
        self.host, self.port = sock.getsockname()[:2]
        config = uvicorn.Config(self.app, log_level="warning", lifespan="off")
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [sock]},
            name="dashboard", daemon=True,
        )

    def start(self) -> None:
        self._thread.start()

    @property
    def running(self) -> bool:
        return self._thread.is_alive()

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        if self._thread.ident is not None:
            self._thread.join(timeout=timeout)
        try:
            self._sock.close()
        except OSError:
            pass
