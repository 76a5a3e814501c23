"""Pydantic request/response models for the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

Mode = Literal["brag", "arag"]


class CreateSessionRequest(BaseModel):
    mode_default: Mode = "arag"


class CreateSessionResponse(BaseModel):
    session_id: str
    mode_default: Mode


class AskRequest(BaseModel):
    question: str = Field(min_length=1)
    mode: Optional[Mode] = None


class Citation(BaseModel):
    label: str
    source_link: str


class AskResponse(BaseModel):
    answer: str
    citations: list[Citation]
    qa_score: Optional[int] = None
    retrieved_links_top5: list[str]
    latency_ms: int
    run_id: str


class TraceEventModel(BaseModel):
    seq: int
    stage: str
    detail: str
    latency_ms: int


class AnswerModel(BaseModel):
    text: str
    citations: list[str]
    used_chunk_ids: list[str]
    insufficient_context: bool


class ScoreModel(BaseModel):
    score: int
    rationale: str


class RunModel(BaseModel):
    run_id: str
    mode: Mode
    question: str
    final_answer: Optional[AnswerModel] = None
    final_score: Optional[ScoreModel] = None
    retrieved_links_top5: list[str]
    events: list[TraceEventModel]
    total_latency_ms: int
    refinements_used: int
    error: Optional[str] = None


class HealthResponse(BaseModel):
    status: str
    index_size: int
    glossary_size: int


class ErrorBody(BaseModel):
    code: str
    message: str
    run_id: Optional[str] = None
