"""FastAPI application: REST CRUD over the store, session runs with long-poll
responses, WebSocket event streaming, profiler and gallery endpoints, and
static hosting for the built frontend."""

from __future__ import annotations

import asyncio
import json
import logging
import os
from pathlib import Path

from fastapi import Body, FastAPI, Query, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from agentloom import engine as engine_mod
from agentloom.db import (
    SINGULAR,
    ConflictError,
    DBManager,
    NotFoundError,
    StoreError,
    ValidationFailed,
)
from agentloom.defaults import seed_defaults
from agentloom.engine import InstantiationError, RuntimeEnv, instantiate
from agentloom.messages import RunEvent
from agentloom.profiler import PricingTable, load_pricing, pricing_from_registry, profile
from agentloom.schema import SpecError, WorkflowSpec, parse_workflow, validate
from agentloom.server.bus import (
    WS_CLOSE_OVERFLOW,
    WS_CLOSE_UNKNOWN_SESSION,
    WS_SUBPROTOCOL,
    RunHub,
    WsInputSource,
)
from agentloom.server.schemas import Envelope, ImportRequest, InboundFrame, PredictRequest, RunRequest

logger = logging.getLogger(__name__)


def _ok(data=None, message="", status_code=200) -> JSONResponse:
    envelope = Envelope(status="ok", data=data, message=message)
    return JSONResponse(envelope.model_dump(exclude={"code"}), status_code=status_code)


def _err(code: str, message: str, status_code: int, data=None) -> JSONResponse:
    envelope = Envelope(status="error", data=data, message=message, code=code)
    return JSONResponse(envelope.model_dump(), status_code=status_code)


def _resolve_pricing(pricing_path: str | Path | None) -> PricingTable:
    path = pricing_path or os.environ.get("AGENTLOOM_PRICING")
    if path and Path(path).exists():
        return load_pricing(path)
    return PricingTable()


def _session_scratch(db: DBManager, session_id: str) -> Path:
    root = db.path.parent / "sessions" / session_id
    scratch = root / "scratch"
    scratch.mkdir(parents=True, exist_ok=True)
    try:
        os.chmod(root, 0o711)
        os.chmod(scratch, 0o777)
    except OSError:  # pragma: no cover - permission tweaks are best effort
        pass
    return scratch


def create_app(db_path: str | Path | None = None,
               pricing_path: str | Path | None = None,
               frontend_dir: str | Path | None = None,
               seed: bool = True) -> FastAPI:
    db = DBManager(db_path)
    swept = db.sweep_running_sessions()
    if swept:
        logger.warning("startup recovery: reset %d session(s) from running to idle: %s",
                       len(swept), ", ".join(swept))
    if seed:
        seed_defaults(db)

    app = FastAPI(title="agentloom", version="0.1.0")
    app.state.db = db
    app.state.hub = RunHub()
    app.state.pricing = _resolve_pricing(pricing_path)

    _register_error_handlers(app)
    _register_api(app)
    _mount_frontend(app, frontend_dir)
    return app


def _register_error_handlers(app: FastAPI) -> None:
    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: NotFoundError):
        return _err("not_found", str(exc), 404)

    @app.exception_handler(ValidationFailed)
    async def _invalid(request: Request, exc: ValidationFailed):
        return _err("validation_failed", str(exc), 422,
                    data={"issues": [{"severity": i.severity, "path": i.path, "message": i.message}
                                     for i in exc.issues]})

    @app.exception_handler(ConflictError)
    async def _conflict(request: Request, exc: ConflictError):
        return _err("conflict", str(exc), 409,
                    data={"referrers": [{"kind": k, "id": i} for k, i in exc.referrers]})

    @app.exception_handler(SpecError)
    async def _spec_error(request: Request, exc: SpecError):
        return _err("spec_error", str(exc), 422)

    @app.exception_handler(StoreError)
    async def _store_error(request: Request, exc: StoreError):
        return _err("store_error", str(exc), 500)


def _kind_of(plural: str) -> str:
    kind = SINGULAR.get(plural)
    if kind is None:
        raise NotFoundError("route", plural)
    return kind


def _register_api(app: FastAPI) -> None:  # noqa: C901 - route table
    db: DBManager = app.state.db
    hub: RunHub = app.state.hub

    # -- session control (registered before the generic CRUD routes) --------

    @app.post("/api/sessions/{session_id}/run")
    def run_task(session_id: str, body: RunRequest):
        if not body.task or not body.task.strip():
            return _err("empty_task", "task must be a non-empty string", 422)
        session = db.get("session", session_id)
        workflow_id = session.payload.get("workflow_ref", "")
        spec = db.resolve_workflow(workflow_id)  # 404s if the workflow is gone

        runtime = hub.runtime(session_id)
        if not runtime.begin_run():
            return _err("run_in_progress", f"session {session_id!r} already has an active run", 409)
        try:
            db.set_session_status(session_id, "running")
            workdir = session.payload.get("workdir") or str(_session_scratch(db, session_id))
            env = RuntimeEnv(pricing=app.state.pricing, workdir=Path(workdir))
            history = db.load_history(session_id)

            def sink(event: RunEvent):
                if event.kind == "message":
                    from agentloom.messages import Message

                    db.append_message(session_id, Message.from_dict(event.payload))
                runtime.publish(event)

            def on_waiting(waiting: bool):
                db.set_session_status(session_id, "awaiting_human" if waiting else "running")

            try:
                instance = instantiate(spec, env, session_id=session_id)
            except InstantiationError as e:
                event = RunEvent(kind="run_error",
                                 payload={"code": "instantiation_error", "message": str(e)},
                                 sequence=0)
                runtime.publish(event)
                return _ok({"status": "error", "final_message": None, "transcript": [],
                            "profile": profile([]).to_dict(), "error": str(e)})

            input_source = WsInputSource(runtime, on_waiting=on_waiting)
            if spec.pattern == "sequential_chat":
                result = engine_mod.run_sequential(instance, body.task, sink=sink,
                                                   input_source=input_source,
                                                   cancel=runtime.cancel)
            else:
                result = engine_mod.run(instance, body.task, history=history, sink=sink,
                                        input_source=input_source, cancel=runtime.cancel)
            return _ok(result.to_dict())
        finally:
            try:
                final = "awaiting_human" if db.get("session", session_id).payload.get(
                    "status") == "awaiting_human" else "idle"
                db.set_session_status(session_id, final)
            except StoreError:  # pragma: no cover - session deleted mid-run
                pass
            runtime.end_run()

    @app.get("/api/sessions/{session_id}/messages")
    def session_messages(session_id: str):
        history = db.load_history(session_id)
        return _ok({"items": [m.to_dict() for m in history]})

    @app.get("/api/sessions/{session_id}/profile")
    def session_profile(session_id: str):
        session = db.get("session", session_id)
        history = db.load_history(session_id)
        pricing: PricingTable = app.state.pricing
        try:
            spec = db.resolve_workflow(session.payload.get("workflow_ref", ""))
            pricing = pricing_from_registry(spec.registry).merged_with(pricing)
        except StoreError:
            pass
        return _ok(profile(history, pricing).to_dict())

    @app.get("/api/sessions/{session_id}/files/{file_path:path}")
    def session_file(session_id: str, file_path: str):
        session = db.get("session", session_id)
        workdir = Path(session.payload.get("workdir") or _session_scratch(db, session_id))
        target = (workdir / file_path).resolve()
        if not str(target).startswith(str(workdir.resolve()) + os.sep):
            return _err("forbidden", "path escapes the session workspace", 403)
        if not target.is_file():
            return _err("not_found", f"no such artifact {file_path!r}", 404)
        return FileResponse(target)

    @app.websocket("/api/ws/sessions/{session_id}")
    async def ws_stream(ws: WebSocket):
        session_id = ws.path_params["session_id"]
        offered = ws.headers.get("sec-websocket-protocol", "")
        subprotocol = WS_SUBPROTOCOL if WS_SUBPROTOCOL in offered else None
        await ws.accept(subprotocol=subprotocol)
        try:
            db.get("session", session_id)
        except NotFoundError:
            await ws.close(code=WS_CLOSE_UNKNOWN_SESSION, reason="unknown session")
            return

        runtime = hub.runtime(session_id)
        sub = runtime.subscribe()
        loop = asyncio.get_running_loop()

        async def pump_out():
            while True:
                if sub.overflowed:
                    await ws.close(code=WS_CLOSE_OVERFLOW, reason="event buffer overflow")
                    return
                frame = await loop.run_in_executor(None, sub.poll, 0.25)
                if frame is not None:
                    await ws.send_text(frame)

        async def pump_in():
            while True:
                raw = await ws.receive_text()
                try:
                    frame = InboundFrame(**json.loads(raw))
                except (ValueError, TypeError):
                    continue
                if frame.kind == "human_input":
                    runtime.input_queue.put(frame.content)
                else:
                    runtime.cancel.set()

        tasks = [asyncio.create_task(pump_out()), asyncio.create_task(pump_in())]
        try:
            done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
            for t in pending:
                t.cancel()
            for t in done:
                exc = t.exception()
                if exc is not None and not isinstance(exc, (WebSocketDisconnect, RuntimeError)):
                    raise exc
        except WebSocketDisconnect:
            pass
        finally:
            for t in tasks:
                t.cancel()
            runtime.unsubscribe(sub)

    # -- gallery -------------------------------------------------------------

    @app.get("/api/{plural}/{entity_id}/export")
    def export_entity(plural: str, entity_id: str):
        kind = _kind_of(plural)
        return _ok({"document": db.export_gallery(kind, entity_id)})

    @app.post("/api/{plural}/import", status_code=201)
    def import_document(plural: str, body: ImportRequest):
        _kind_of(plural)  # validates the route; the document declares its contents
        item = db.import_gallery(body.document, title=body.title, description=body.description)
        return _ok(item.to_dict(), status_code=201)

    # -- generic CRUD ----------------------------------------------------------

    @app.get("/api/{plural}")
    def list_entities(plural: str, name_contains: str | None = Query(default=None),
                      tag: str | None = Query(default=None)):
        kind = _kind_of(plural)
        return _ok({"items": [e.to_dict() for e in db.list(kind, name_contains, tag)]})

    @app.get("/api/{plural}/{entity_id}")
    def get_entity(plural: str, entity_id: str):
        kind = _kind_of(plural)
        return _ok(db.get(kind, entity_id).to_dict())

    @app.post("/api/{plural}")
    def upsert_entity(plural: str, body: dict = Body(...)):
        kind = _kind_of(plural)
        payload = dict(body)
        tags = payload.pop("tags", None)
        entity_id = payload.get("id")
        if entity_id:
            updated = db.update(kind, entity_id, payload,
                                tags=tuple(tags) if tags is not None else None)
            return _ok(updated.to_dict())
        created = db.create(kind, payload, tags=tuple(tags or ()))
        if kind == "session":
            scratch = _session_scratch(db, created.id)
            payload = {k: v for k, v in created.payload.items() if k != "message_refs"}
            payload["workdir"] = str(scratch)
            created = db.update("session", created.id, payload)
        return _ok(created.to_dict(), status_code=201)

    @app.delete("/api/{plural}/{entity_id}")
    def delete_entity(plural: str, entity_id: str, force: bool = Query(default=False)):
        kind = _kind_of(plural)
        db.delete(kind, entity_id, force=force)
        return _ok({"deleted": entity_id})


def _mount_frontend(app: FastAPI, frontend_dir: str | Path | None) -> None:
    candidates = []
    if frontend_dir:
        candidates.append(Path(frontend_dir))
    env_dir = os.environ.get("AGENTLOOM_FRONTEND")
    if env_dir:
        candidates.append(Path(env_dir))
    # repo layout: src/agentloom/server/app.py -> <root>/frontend/dist
    candidates.append(Path(__file__).resolve().parents[3] / "frontend" / "dist")
    candidates.append(Path.cwd() / "frontend" / "dist")
    for cand in candidates:
        if cand.is_dir() and (cand / "index.html").exists():
            app.mount("/", StaticFiles(directory=cand, html=True), name="frontend")
            return

    @app.get("/", response_class=HTMLResponse)
    def index():
        return ("<html><body><h1>agentloom</h1>"
                "<p>The web UI bundle is not built. The API lives under <code>/api</code>.</p>"
                "</body></html>")


def load_workflow_file(path: str | Path) -> tuple[WorkflowSpec, Path]:
    """Parse and validate a workflow file; raises SpecError/InstantiationError
    with diagnostics before any server binds a port."""
    text = Path(path).read_text(encoding="utf-8")
    spec = parse_workflow(text)
    report = validate(spec)
    if not report.ok:
        from agentloom.schema import InvalidSpecError

        raise InvalidSpecError(report)
    return spec, Path(path).resolve().parent


def build_serve_app(workflow_path: str | Path,
                    pricing_path: str | Path | None = None) -> FastAPI:
    """Deployment mode: one exported workflow served as a prediction endpoint.

    POST /predict {task} runs the workflow in a fresh ephemeral session per
    request; concurrent requests are independent.
    """
    spec, base_dir = load_workflow_file(workflow_path)
    pricing = _resolve_pricing(pricing_path)
    # fail fast on unconstructible backends (missing env vars, bad scripts)
    instantiate(spec, RuntimeEnv(pricing=pricing, base_dir=base_dir))

    app = FastAPI(title=f"agentloom serve: {spec.name}", version="0.1.0")

    @app.exception_handler(SpecError)
    async def _spec_error(request: Request, exc: SpecError):
        return _err("spec_error", str(exc), 422)

    @app.post("/predict")
    def predict(body: PredictRequest):
        if not body.task or not body.task.strip():
            return _err("empty_task", "task must be a non-empty string", 422)
        env = RuntimeEnv(pricing=pricing, base_dir=base_dir)
        try:
            instance = instantiate(spec, env)
        except InstantiationError as e:
            return _err("instantiation_error", str(e), 422)
        if spec.pattern == "sequential_chat":
            result = engine_mod.run_sequential(instance, body.task)
        else:
            result = engine_mod.run(instance, body.task)
        return _ok({"session_ref": instance.session_id, "result": result.to_dict()})

    @app.get("/")
    def about():
        return {"workflow": spec.name, "pattern": spec.pattern, "endpoint": "/predict"}

    return app
