"""HTTP surface over one memory bank.

Endpoints (all JSON, UTF-8):

* ``POST /v1/ingest``  sessions payload -> counts
* ``POST /v1/query``   {query, k?, filter?, date?} -> RetrievalResult
* ``POST /v1/answer``  {query, date?} -> {answer}
* ``GET  /v1/health``  -> {status, units, edges}

Errors use the envelope ``{"code": ..., "message": ...}`` with 400 for
schema problems, 409 for duplicate sessions (and querying an empty
bank), 503 for provider failures. Ingests serialize behind a writer
lock; queries run concurrently. Shutdown flushes a snapshot.
"""

from __future__ import annotations

import json
import logging
import threading
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import AppConfig
from .errors import (
    DegenerateVector,
    DuplicateSession,
    EmptyBank,
    EmptyGeneration,
    EmptyInput,
    FormatError,
    GranmemError,
    ProviderError,
)
from .model import DialogueTurn, MemoryBank, Session
from .persistence import MANIFEST_FILE, load_bank, save_bank
from .pipeline import answer_question, ingest_session
from .retrieval import RetrievalConfig, retrieve

log = logging.getLogger(__name__)


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def _error_for(exc: Exception) -> JSONResponse:
    if isinstance(exc, DuplicateSession):
        return _error(409, "duplicate", str(exc))
    if isinstance(exc, EmptyBank):
        return _error(409, "empty_bank", str(exc))
    if isinstance(exc, (ProviderError, EmptyGeneration)):
        return _error(503, "provider", str(exc))
    if isinstance(exc, (FormatError, EmptyInput, DegenerateVector, ValueError)):
        return _error(400, "schema", str(exc))
    if isinstance(exc, GranmemError):
        return _error(400, "schema", str(exc))
    raise exc


def _parse_sessions_payload(payload) -> list[Session]:
    if isinstance(payload, dict):
        payload = payload.get("sessions")
    if not isinstance(payload, list) or not payload:
        raise FormatError("expected a non-empty list of sessions")
    sessions = []
    for i, record in enumerate(payload):
        if not isinstance(record, dict) or "session_id" not in record or "turns" not in record:
            raise FormatError(f"session {i} needs session_id and turns")
        turns_raw = record["turns"]
        if not isinstance(turns_raw, list) or not turns_raw:
            raise FormatError(f"session {i}: turns must be a non-empty list")
        turns = []
        for j, turn in enumerate(turns_raw):
            if not isinstance(turn, dict) or "user" not in turn:
                raise FormatError(f"session {i}, turn {j}: missing user field")
            turns.append(
                DialogueTurn(
                    index=j,
                    user_text=turn["user"],
                    assistant_text=turn.get("assistant", ""),
                    timestamp=turn.get("timestamp"),
                )
            )
        sessions.append(
            Session(session_id=str(record["session_id"]), turns=turns, date=record.get("date"))
        )
    return sessions


class ServiceState:
    def __init__(self, bank_dir: str | Path, config: AppConfig):
        self.bank_dir = Path(bank_dir)
        self.config = config
        if (self.bank_dir / MANIFEST_FILE).exists():
            self.bank: MemoryBank = load_bank(self.bank_dir)
        else:
            self.bank = MemoryBank()
        self.generation = config.generation_provider()
        self.embedder = config.embedding_provider()
        self.write_lock = threading.Lock()

    def snapshot(self) -> None:
        save_bank(self.bank, self.bank_dir, embedding_fingerprint=self.embedder.fingerprint())


def create_app(bank_dir: str | Path, config: AppConfig | None = None) -> FastAPI:
    state = ServiceState(bank_dir, config or AppConfig())

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        with state.write_lock:
            state.snapshot()
            log.info("snapshot flushed to %s", state.bank_dir)

    app = FastAPI(title="granmem", lifespan=lifespan)
    app.state.granmem = state

    async def read_json(request: Request):
        try:
            return json.loads(await request.body())
        except json.JSONDecodeError as exc:
            raise FormatError(f"body is not valid JSON: {exc.msg}") from exc

    @app.post("/v1/ingest")
    async def ingest(request: Request):
        try:
            sessions = _parse_sessions_payload(await read_json(request))
            with state.write_lock:
                units_added = 0
                edges_added = 0
                for session in sessions:
                    _, edges = ingest_session(
                        state.bank, session, state.generation, state.embedder
                    )
                    units_added += 1
                    edges_added += edges
                state.snapshot()
            return {
                "units_added": units_added,
                "edges_added": edges_added,
                "units": len(state.bank),
                "edges": state.bank.graph.edge_count(),
            }
        except Exception as exc:
            return _error_for(exc)

    @app.post("/v1/query")
    async def query(request: Request):
        try:
            payload = await read_json(request)
            if not isinstance(payload, dict) or not isinstance(payload.get("query"), str):
                raise FormatError("body must be an object with a string 'query'")
            k = payload.get("k")
            if k is not None and (not isinstance(k, int) or k < 1):
                raise FormatError("'k' must be a positive integer")
            filter_enabled = payload.get("filter", True)
            if not isinstance(filter_enabled, bool):
                raise FormatError("'filter' must be a boolean")
            base = state.config.retrieval
            retrieval_config = RetrievalConfig(
                top_k=k if k is not None else base.top_k,
                seed_count=base.seed_count,
                damping=base.damping,
                ppr_tol=base.ppr_tol,
                ppr_max_iter=base.ppr_max_iter,
                temperature=base.temperature,
                entropy_floor=base.entropy_floor,
                filter_enabled=filter_enabled,
            )
            result = retrieve(
                payload["query"],
                state.bank,
                retrieval_config,
                state.embedder,
                generation_provider=state.generation,
                question_date=payload.get("date"),
            )
            return result.to_dict()
        except Exception as exc:
            return _error_for(exc)

    @app.post("/v1/answer")
    async def answer(request: Request):
        try:
            payload = await read_json(request)
            if not isinstance(payload, dict) or not isinstance(payload.get("query"), str):
                raise FormatError("body must be an object with a string 'query'")
            base = state.config.retrieval
            retrieval_config = RetrievalConfig(
                top_k=base.top_k,
                seed_count=base.seed_count,
                damping=base.damping,
                ppr_tol=base.ppr_tol,
                ppr_max_iter=base.ppr_max_iter,
                temperature=base.temperature,
                entropy_floor=base.entropy_floor,
                filter_enabled=True,
            )
            text, _ = answer_question(
                payload["query"],
                state.bank,
                retrieval_config,
                state.embedder,
                state.generation,
                question_date=payload.get("date"),
                offline=state.config.offline_mode,
            )
            return {"answer": text}
        except Exception as exc:
            return _error_for(exc)

    @app.get("/v1/health")
    async def health():
        return {
            "status": "ok",
            "units": len(state.bank),
            "edges": state.bank.graph.edge_count(),
        }

    return app
