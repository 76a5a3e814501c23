"""Pipeline state machines: the single-pass baseline (brag) and the
iterative agentic pipeline (arag) with its QA-threshold feedback loop,
sub-query refinement, broader sweep, and uncertainty fallback.

Every run produces a full trace: ordered stage events with latencies and a
machine-readable JSON detail string per event.
"""

from __future__ import annotations

import json
import logging
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

import numpy as np

from . import agents
from .agents import PromptLibrary, QaAssessment, SynthesizedAnswer
from .corpus import Chunk
from .gateway import ChatTurn, Clock, Gateway, GatewayError, ModelRequest, ModelResponse, RerankCandidate
from .glossary import Glossary
from .index import RetrievalHit, VectorIndex

logger = logging.getLogger(__name__)

Mode = Literal["brag", "arag"]
Stage = Literal[
    "intent", "reformulate", "retrieve", "subquery", "rerank",
    "synthesize", "assess", "broad_sweep", "fallback",
]

UNCERTAINTY_NOTICE = (
    "Note: the system could not reach a confident answer; "
    "this is its best attempt and may be incomplete."
)


class PipelineError(Exception):
    """A stage failed; carries the partial run trace."""

    def __init__(self, message: str, run: "PipelineRun | None" = None):
        super().__init__(message)
        self.run = run


class BudgetExceededError(PipelineError):
    """Completion budget exceeded within a single run."""


@dataclass
class PipelineConfig:
    mode: Mode = "arag"
    top_k: int = 5
    qa_threshold: int = 6
    max_refinements: int = 2
    broad_sweep_multiplier: int = 3
    low_retrieval_score: float = 0.35
    completion_budget: int = 64
    history_turns: int = 10

    def __post_init__(self) -> None:
        if self.mode not in ("brag", "arag"):
            raise ValueError(f"unknown mode: {self.mode}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 <= self.qa_threshold <= 10:
            raise ValueError("qa_threshold must be in [0, 10]")
        if not 0 <= self.max_refinements <= 2:
            raise ValueError("max_refinements must be 0, 1, or 2")
        if self.broad_sweep_multiplier < 2:
            raise ValueError("broad_sweep_multiplier must be >= 2")
        if self.completion_budget < 1:
            raise ValueError("completion_budget must be positive")


@dataclass
class TraceEvent:
    seq: int
    stage: Stage
    detail: str
    latency_ms: int


@dataclass
class PipelineRun:
    run_id: str
    mode: Mode
    question: str
    final_answer: SynthesizedAnswer | None
    final_score: QaAssessment | None
    retrieved_links_top5: list[str]
    events: list[TraceEvent]
    total_latency_ms: int
    refinements_used: int
    error: str | None = None


@dataclass
class PipelineDeps:
    """Everything a pipeline run needs, bundled for injection."""

    index: VectorIndex
    chunks: Mapping[str, Chunk]
    gateway: Gateway
    prompts: PromptLibrary
    glossary: Glossary | None = None
    clock: Clock = field(default_factory=Clock)
    run_id_factory: Callable[[], str] = field(default_factory=lambda: (lambda: uuid.uuid4().hex[:12]))
    retrieval_parallelism: int = 4


def sequential_run_ids(prefix: str = "run") -> Callable[[], str]:
    """Deterministic run-id factory for scripted/offline runs."""
    counter = {"n": 0}

    def make() -> str:
        counter["n"] += 1
        return f"{prefix}-{counter['n']:04d}"

    return make


class _Trace:
    """Single-owner per-run trace assembly."""

    def __init__(self, clock: Clock):
        self.clock = clock
        self.events: list[TraceEvent] = []
        self._seq = 0

    def add(self, stage: Stage, detail: dict, latency_ms: int = 0) -> None:
        self._seq += 1
        self.events.append(TraceEvent(
            seq=self._seq,
            stage=stage,
            detail=json.dumps(detail, ensure_ascii=False, sort_keys=True),
            latency_ms=max(0, latency_ms),
        ))

    def warn(self, stage: Stage, message: str) -> None:
        self.add(stage, {"warning": message})

    def warner(self, stage: Stage) -> Callable[[str], None]:
        def warn(message: str) -> None:
            logger.warning("%s", message)
            self.warn(stage, message)
        return warn


class _RunGateway:
    """Per-run gateway view: counts completions against the budget."""

    def __init__(self, gateway: Gateway, budget: int):
        self._gateway = gateway
        self._budget = budget
        self.completions = 0

    def complete(self, req: ModelRequest) -> ModelResponse:
        if self.completions >= self._budget:
            raise BudgetExceededError("budget exceeded")
        self.completions += 1
        return self._gateway.complete(req)

    def embed(self, texts: Sequence[str]):
        return self._gateway.embed(texts)

    def rerank(self, query: str, candidates, *, on_warning=None):
        return self._gateway.rerank(
            query, candidates, complete=self.complete, on_warning=on_warning
        )


def dedup_links_top5(hits: Sequence[RetrievalHit]) -> list[str]:
    """Links of the top-5 entries in rank order, deduplicated keeping the
    best (lowest) rank per link."""
    links: list[str] = []
    for hit in hits[:5]:
        if hit.source_link not in links:
            links.append(hit.source_link)
    return links


def _timed(clock: Clock, fn, *args, **kwargs):
    start = clock.now_ms()
    result = fn(*args, **kwargs)
    return result, max(0, clock.now_ms() - start)


def run_brag(
    question: str,
    history: Sequence[ChatTurn],
    cfg: PipelineConfig,
    deps: PipelineDeps,
) -> PipelineRun:
    """Single-pass pipeline: reformulate, retrieve once, synthesize.

    No acronym resolution, no re-ranking, no quality assessment, no loop.
    """
    clock = deps.clock
    trace = _Trace(clock)
    run_id = deps.run_id_factory()
    rgw = _RunGateway(deps.gateway, cfg.completion_budget)
    started = clock.now_ms()

    def partial(error: str) -> PipelineRun:
        return PipelineRun(
            run_id=run_id, mode="brag", question=question,
            final_answer=None, final_score=None, retrieved_links_top5=[],
            events=trace.events, total_latency_ms=max(0, clock.now_ms() - started),
            refinements_used=0, error=error,
        )

    try:
        rq, dt = _timed(clock, agents.reformulate, question, history, None,
                        rgw, deps.prompts, trace.warner("reformulate"))
        trace.add("reformulate", {
            "search": rq.search_string,
            "continuation": rq.is_continuation,
            "expansions": [],
        }, dt)

        start = clock.now_ms()
        hits: list[RetrievalHit] = []
        if len(deps.index):
            vec = rgw.embed([rq.search_string])[0]
            hits = deps.index.search(vec, cfg.top_k)
        detail = {"query": rq.search_string, "hits": len(hits)}
        if hits:
            detail["top_score"] = round(hits[0].score, 4)
        trace.add("retrieve", detail, clock.now_ms() - start)

        answer, dt = _timed(clock, agents.synthesize, question, hits, deps.chunks,
                            rgw, deps.prompts, trace.warner("synthesize"))
        trace.add("synthesize", {
            "insufficient_context": answer.insufficient_context,
            "citations": len(answer.citations),
        }, dt)

        return PipelineRun(
            run_id=run_id, mode="brag", question=question,
            final_answer=answer, final_score=None,
            retrieved_links_top5=dedup_links_top5(hits),
            events=trace.events,
            total_latency_ms=max(0, clock.now_ms() - started),
            refinements_used=0,
        )
    except PipelineError as exc:
        if exc.run is None:
            raise type(exc)(str(exc), run=partial(str(exc))) from exc
        raise
    except Exception as exc:
        raise PipelineError(str(exc), run=partial(str(exc))) from exc


def _retrieve_subqueries(
    sub_queries: Sequence[str],
    deps: PipelineDeps,
    rgw: _RunGateway,
    k: int,
) -> list[list[RetrievalHit]]:
    """Embed all sub-queries in one batch, then search in parallel; results
    come back in sub-query order."""
    vectors = rgw.embed(list(sub_queries))
    if len(sub_queries) == 1:
        return [deps.index.search(vectors[0], k)]
    with ThreadPoolExecutor(max_workers=max(1, deps.retrieval_parallelism)) as pool:
        return list(pool.map(lambda v: deps.index.search(v, k), vectors))


def _union_hits(*hit_lists: Sequence[RetrievalHit]) -> list[RetrievalHit]:
    """Dedup by chunk id keeping the best retrieval score; ordered by score
    descending, then chunk id."""
    best: dict[str, RetrievalHit] = {}
    for hits in hit_lists:
        for hit in hits:
            kept = best.get(hit.chunk_id)
            if kept is None or hit.score > kept.score:
                best[hit.chunk_id] = hit
    merged = sorted(best.values(), key=lambda h: (-h.score, h.chunk_id))
    return [replace(h, rank=i) for i, h in enumerate(merged, start=1)]


def _rerank_keep_top(
    query: str,
    candidates: list[RetrievalHit],
    k: int,
    deps: PipelineDeps,
    rgw: _RunGateway,
    trace: _Trace,
) -> list[RetrievalHit]:
    """Cross-encoder reorder, keep top k. On rerank failure the pre-rerank
    order is kept with a warning. Reordered hits keep their retrieval scores;
    ranks are renumbered."""
    if not candidates:
        return []
    by_id = {h.chunk_id: h for h in candidates}
    rerank_input = [
        RerankCandidate(h.chunk_id, deps.chunks[h.chunk_id].text if h.chunk_id in deps.chunks else h.chunk_id)
        for h in candidates
    ]
    start = deps.clock.now_ms()
    try:
        ranked = rgw.rerank(query, rerank_input, on_warning=trace.warner("rerank"))
        ordered = [by_id[c.chunk_id] for c in ranked]
        detail = {"candidates": len(candidates), "kept": min(k, len(candidates))}
    except BudgetExceededError:
        raise
    except GatewayError as exc:
        trace.warn("rerank", f"rerank failed, keeping retrieval order: {exc}")
        ordered = candidates
        detail = {"candidates": len(candidates), "kept": min(k, len(candidates)),
                  "fallback": "retrieval-order"}
    kept = [replace(h, rank=i) for i, h in enumerate(ordered[:k], start=1)]
    trace.add("rerank", detail, deps.clock.now_ms() - start)
    return kept


def run_arag(
    question: str,
    history: Sequence[ChatTurn],
    cfg: PipelineConfig,
    deps: PipelineDeps,
) -> PipelineRun:
    """Iterative agentic pipeline.

    intent -> reformulate (with glossary) -> retrieve -> synthesize ->
    assess; while the score is below the threshold, refine: first with
    sub-query decomposition plus re-ranking, then with a broader sweep on
    the original search string. If no attempt clears the threshold, the
    best-scoring answer is returned with an uncertainty notice appended.
    """
    clock = deps.clock
    trace = _Trace(clock)
    run_id = deps.run_id_factory()
    rgw = _RunGateway(deps.gateway, cfg.completion_budget)
    started = clock.now_ms()

    def partial(error: str) -> PipelineRun:
        return PipelineRun(
            run_id=run_id, mode="arag", question=question,
            final_answer=None, final_score=None, retrieved_links_top5=[],
            events=trace.events, total_latency_ms=max(0, clock.now_ms() - started),
            refinements_used=0, error=error,
        )

    def finish(answer: SynthesizedAnswer, score: QaAssessment | None,
               context: Sequence[RetrievalHit], refinements: int) -> PipelineRun:
        return PipelineRun(
            run_id=run_id, mode="arag", question=question,
            final_answer=answer, final_score=score,
            retrieved_links_top5=dedup_links_top5(list(context)),
            events=trace.events,
            total_latency_ms=max(0, clock.now_ms() - started),
            refinements_used=refinements,
        )

    try:
        intent, dt = _timed(clock, agents.classify_intent, question, history,
                            rgw, deps.prompts, trace.warner("intent"))
        trace.add("intent", {"kind": intent.kind}, dt)

        if intent.kind == "summary":
            start = clock.now_ms()
            summary = agents.summarize_history(history, rgw, deps.prompts)
            trace.add("synthesize", {"history_summary": True}, clock.now_ms() - start)
            answer = SynthesizedAnswer(text=summary, citations=[], used_chunk_ids=[],
                                       insufficient_context=False)
            return finish(answer, None, [], 0)

        rq, dt = _timed(clock, agents.reformulate, question, history, deps.glossary,
                        rgw, deps.prompts, trace.warner("reformulate"))
        trace.add("reformulate", {
            "search": rq.search_string,
            "continuation": rq.is_continuation,
            "expansions": [
                {"acronym": a, "expansion": e, "ambiguous": " | " in e}
                for a, e in rq.expansions_applied
            ],
        }, dt)

        start = clock.now_ms()
        first_pass: list[RetrievalHit] = []
        query_vec: np.ndarray | None = None
        if len(deps.index):
            query_vec = rgw.embed([rq.search_string])[0]
            first_pass = deps.index.search(query_vec, cfg.top_k)
        detail = {"query": rq.search_string, "hits": len(first_pass)}
        if first_pass:
            detail["top_score"] = round(first_pass[0].score, 4)
        low_initial = not first_pass or first_pass[0].score < cfg.low_retrieval_score
        if low_initial:
            detail["low_initial_retrieval"] = True
        trace.add("retrieve", detail, clock.now_ms() - start)

        attempts: list[tuple[QaAssessment, SynthesizedAnswer, list[RetrievalHit]]] = []

        def synth_and_assess(context: list[RetrievalHit]) -> QaAssessment:
            answer, dt = _timed(clock, agents.synthesize, question, context, deps.chunks,
                                rgw, deps.prompts, trace.warner("synthesize"))
            trace.add("synthesize", {
                "insufficient_context": answer.insufficient_context,
                "citations": len(answer.citations),
            }, dt)
            assessment, dt = _timed(clock, agents.assess, question, answer, context,
                                    rgw, deps.prompts, trace.warner("assess"))
            trace.add("assess", {"score": assessment.score}, dt)
            attempts.append((assessment, answer, context))
            return assessment

        assessment = synth_and_assess(first_pass)
        if assessment.score >= cfg.qa_threshold:
            _, answer, context = attempts[-1]
            return finish(answer, assessment, context, 0)

        refinements = 0

        if cfg.max_refinements >= 1:
            refinements = 1
            sqs, dt = _timed(clock, agents.generate_subqueries, rq.search_string,
                             first_pass, rgw, deps.prompts, trace.warner("subquery"))
            trace.add("subquery", {"sub_queries": sqs.sub_queries}, dt)

            start = clock.now_ms()
            per_subquery = _retrieve_subqueries(sqs.sub_queries, deps, rgw, cfg.top_k) \
                if len(deps.index) else [[] for _ in sqs.sub_queries]
            elapsed = clock.now_ms() - start
            share = max(0, elapsed // max(1, len(sqs.sub_queries)))
            for sub_query, sub_hits in zip(sqs.sub_queries, per_subquery):
                sub_detail = {"sub_query": sub_query, "hits": len(sub_hits)}
                if sub_hits:
                    sub_detail["top_score"] = round(sub_hits[0].score, 4)
                trace.add("retrieve", sub_detail, share)

            union = _union_hits(first_pass, *per_subquery)
            context = _rerank_keep_top(rq.search_string, union, cfg.top_k, deps, rgw, trace)
            assessment = synth_and_assess(context)
            if assessment.score >= cfg.qa_threshold:
                _, answer, context = attempts[-1]
                return finish(answer, assessment, context, refinements)

        if cfg.max_refinements >= 2:
            refinements = 2
            start = clock.now_ms()
            sweep_k = cfg.top_k * cfg.broad_sweep_multiplier
            sweep_hits = deps.index.search(query_vec, sweep_k) \
                if (len(deps.index) and query_vec is not None) else []
            trace.add("broad_sweep", {"k": sweep_k, "hits": len(sweep_hits)},
                      clock.now_ms() - start)
            context = _rerank_keep_top(rq.search_string, list(sweep_hits), cfg.top_k,
                                       deps, rgw, trace)
            assessment = synth_and_assess(context)
            if assessment.score >= cfg.qa_threshold:
                _, answer, context = attempts[-1]
                return finish(answer, assessment, context, refinements)

        # No attempt cleared the threshold: surface the best answer so far,
        # flagged with the fixed uncertainty notice.
        best_index = max(range(len(attempts)), key=lambda i: attempts[i][0].score)
        best_score, best_answer, best_context = attempts[best_index]
        trace.add("fallback", {"best_score": best_score.score, "attempt": best_index + 1})
        final_answer = replace(
            best_answer, text=best_answer.text.rstrip() + "\n\n" + UNCERTAINTY_NOTICE
        )
        return finish(final_answer, best_score, best_context, refinements)

    except PipelineError as exc:
        if exc.run is None:
            raise type(exc)(str(exc), run=partial(str(exc))) from exc
        raise
    except Exception as exc:
        raise PipelineError(str(exc), run=partial(str(exc))) from exc


def run_pipeline(
    question: str,
    history: Sequence[ChatTurn],
    cfg: PipelineConfig,
    deps: PipelineDeps,
    mode: Mode | None = None,
) -> PipelineRun:
    mode = mode or cfg.mode
    if mode == "brag":
        return run_brag(question, history, cfg, deps)
    return run_arag(question, history, cfg, deps)


# --- run (de)serialization -------------------------------------------------

def run_to_dict(run: PipelineRun) -> dict:
    return {
        "run_id": run.run_id,
        "mode": run.mode,
        "question": run.question,
        "final_answer": None if run.final_answer is None else {
            "text": run.final_answer.text,
            "citations": run.final_answer.citations,
            "used_chunk_ids": run.final_answer.used_chunk_ids,
            "insufficient_context": run.final_answer.insufficient_context,
        },
        "final_score": None if run.final_score is None else {
            "score": run.final_score.score,
            "rationale": run.final_score.rationale,
        },
        "retrieved_links_top5": run.retrieved_links_top5,
        "events": [
            {"seq": e.seq, "stage": e.stage, "detail": e.detail, "latency_ms": e.latency_ms}
            for e in run.events
        ],
        "total_latency_ms": run.total_latency_ms,
        "refinements_used": run.refinements_used,
        "error": run.error,
    }


def run_from_dict(record: dict) -> PipelineRun:
    answer = record.get("final_answer")
    score = record.get("final_score")
    return PipelineRun(
        run_id=record["run_id"],
        mode=record["mode"],
        question=record["question"],
        final_answer=None if answer is None else SynthesizedAnswer(
            text=answer["text"],
            citations=list(answer["citations"]),
            used_chunk_ids=list(answer["used_chunk_ids"]),
            insufficient_context=answer["insufficient_context"],
        ),
        final_score=None if score is None else QaAssessment(
            score=score["score"], rationale=score["rationale"]),
        retrieved_links_top5=list(record["retrieved_links_top5"]),
        events=[TraceEvent(**e) for e in record["events"]],
        total_latency_ms=record["total_latency_ms"],
        refinements_used=record["refinements_used"],
        error=record.get("error"),
    )


def serialize_run(run: PipelineRun) -> str:
    return json.dumps(run_to_dict(run), ensure_ascii=False, sort_keys=True)


def append_run(run: PipelineRun, path: Path | str) -> None:
    """Append one run record to the line-delimited run log."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(serialize_run(run) + "\n")


def read_run_log(path: Path | str) -> list[PipelineRun]:
    path = Path(path)
    if not path.is_file():
        raise PipelineError(f"run log not found: {path}")
    runs = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                runs.append(run_from_dict(json.loads(line)))
    return runs
