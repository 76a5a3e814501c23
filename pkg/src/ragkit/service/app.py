"""FastAPI application wrapping the engine: sessions, ask, run traces,
health, plus static mounts for the chat UI bundle and the corpus browser
when those directories exist."""

from __future__ import annotations

import logging
from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..engine import Engine
from ..orchestrator import PipelineError, PipelineRun, run_to_dict
from .schemas import (
    AskRequest,
    AskResponse,
    Citation,
    CreateSessionRequest,
    CreateSessionResponse,
    ErrorBody,
    HealthResponse,
    RunModel,
)
from .sessions import SessionManager, SessionNotFound

logger = logging.getLogger(__name__)


def _ask_response(run: PipelineRun) -> AskResponse:
    answer = run.final_answer
    citations = []
    if answer is not None:
        citations = [
            Citation(label=str(i), source_link=link)
            for i, link in enumerate(answer.citations, start=1)
        ]
    return AskResponse(
        answer=answer.text if answer else "",
        citations=citations,
        qa_score=run.final_score.score if run.final_score else None,
        retrieved_links_top5=run.retrieved_links_top5,
        latency_ms=run.total_latency_ms,
        run_id=run.run_id,
    )


def create_app(engine: Engine, ui_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="ragkit", version="0.1.0")
    sessions = SessionManager(engine)
    app.state.engine = engine
    app.state.sessions = sessions

    @app.exception_handler(SessionNotFound)
    def session_not_found(request, exc: SessionNotFound):
        body = ErrorBody(code="not_found", message=f"unknown session: {exc.args[0]}")
        return JSONResponse(status_code=404, content=body.model_dump())

    @app.exception_handler(PipelineError)
    def pipeline_failed(request, exc: PipelineError):
        body = ErrorBody(
            code="pipeline_error",
            message=str(exc),
            run_id=exc.run.run_id if exc.run else None,
        )
        return JSONResponse(status_code=500, content=body.model_dump())

    @app.post("/v1/sessions", response_model=CreateSessionResponse)
    def create_session(request: CreateSessionRequest) -> CreateSessionResponse:
        session = sessions.create(request.mode_default)
        return CreateSessionResponse(
            session_id=session.session_id, mode_default=session.mode_default
        )

    @app.post("/v1/sessions/{session_id}/ask", response_model=AskResponse)
    def ask(session_id: str, request: AskRequest) -> AskResponse:
        if not request.question.strip():
            return JSONResponse(
                status_code=422,
                content=ErrorBody(code="validation_error",
                                  message="question must be non-empty").model_dump(),
            )
        run = sessions.ask(session_id, request.question, request.mode)
        return _ask_response(run)

    @app.get("/v1/runs/{run_id}", response_model=RunModel)
    def get_trace(run_id: str):
        run = engine.get_run(run_id)
        if run is None:
            return JSONResponse(
                status_code=404,
                content=ErrorBody(code="not_found",
                                  message=f"unknown run: {run_id}").model_dump(),
            )
        return run_to_dict(run)

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(
            status="ok",
            index_size=engine.index_size,
            glossary_size=engine.glossary_size,
        )

    corpus_dir = engine.corpus_dir
    if corpus_dir is not None and Path(corpus_dir).is_dir():
        app.mount("/corpus", StaticFiles(directory=str(corpus_dir)), name="corpus")
    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
