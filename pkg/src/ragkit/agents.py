"""The specialized pipeline agents, each a pure function over one gateway
call: intent classification, query reformulation, sub-query generation,
answer synthesis, answer quality assessment, and history summarization.

Prompt templates live as plain-text files with named placeholders; rendering
is literal string substitution so template content can contain braces.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Literal, Mapping, Sequence

from .corpus import Chunk
from .gateway import ChatTurn, Gateway, ModelRequest, parse_first_int
from .glossary import Glossary, expand as glossary_expand
from .index import RetrievalHit

logger = logging.getLogger(__name__)

INSUFFICIENT_CONTEXT_NOTICE = (
    "The retrieved context does not contain enough information to answer this question."
)

HISTORY_TURN_LIMIT = 10

WarnFn = Callable[[str], None]


def _default_warn(message: str) -> None:
    logger.warning("%s", message)


class PromptLibrary:
    """Loads named prompt templates; an override directory takes precedence
    over the packaged defaults."""

    def __init__(self, directory: Path | str | None = None):
        self._dir = Path(directory) if directory else None
        self._cache: dict[str, str] = {}

    def raw(self, name: str) -> str:
        if name not in self._cache:
            if self._dir is not None and (self._dir / f"{name}.txt").is_file():
                text = (self._dir / f"{name}.txt").read_text(encoding="utf-8")
            else:
                text = (resources.files("ragkit") / "prompts" / f"{name}.txt").read_text(
                    encoding="utf-8"
                )
            self._cache[name] = text
        return self._cache[name]

    def render(self, name: str, **values: str) -> str:
        text = self.raw(name)
        for key, value in values.items():
            text = text.replace("{" + key + "}", value)
        return text


@dataclass(frozen=True)
class Intent:
    kind: Literal["retrieval", "summary"]


@dataclass
class ReformulatedQuery:
    original: str
    search_string: str
    expansions_applied: list[tuple[str, str]] = field(default_factory=list)
    is_continuation: bool = False


@dataclass
class SubQuerySet:
    sub_queries: list[str]
    derived_from: str


@dataclass
class SynthesizedAnswer:
    text: str
    citations: list[str] = field(default_factory=list)
    used_chunk_ids: list[str] = field(default_factory=list)
    insufficient_context: bool = False


@dataclass
class QaAssessment:
    score: int
    rationale: str = ""


def format_history(history: Sequence[ChatTurn], limit: int = HISTORY_TURN_LIMIT) -> str:
    turns = list(history)[-limit:]
    if not turns:
        return "(none)"
    return "\n".join(f"{t.role}: {t.content}" for t in turns)


def format_context(hits: Sequence[RetrievalHit], chunks: Mapping[str, Chunk]) -> str:
    if not hits:
        return "(none)"
    lines = []
    for i, hit in enumerate(hits, start=1):
        chunk = chunks.get(hit.chunk_id)
        text = chunk.text if chunk else ""
        lines.append(f"[{i}] {text}")
    return "\n".join(lines)


def _ask(gw: Gateway, prompt: str, tag: str) -> str:
    response = gw.complete(ModelRequest(turns=[ChatTurn("user", prompt)], tag=tag))
    return response.text


def classify_intent(
    user_input: str,
    history: Sequence[ChatTurn],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn = _default_warn,
) -> Intent:
    """One call with the intent template; unparsable replies default to
    retrieval with a warning."""
    if not user_input.strip():
        raise ValueError("user input must be non-empty")
    reply = _ask(gw, prompts.render(
        "intent", query=user_input, history=format_history(history)), "intent")
    words = set(re.findall(r"[a-z]+", reply.lower()))
    if "summary" in words and "retrieval" not in words:
        return Intent("summary")
    if "retrieval" in words:
        return Intent("retrieval")
    warn(f"unparsable intent reply {reply!r}; defaulting to retrieval")
    return Intent("retrieval")


def reformulate(
    user_input: str,
    history: Sequence[ChatTurn],
    glossary: Glossary | None,
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn = _default_warn,
) -> ReformulatedQuery:
    """Glossary expansion first, then one call producing the keyword search
    string and the continuation flag. An empty reply falls back to the
    expanded original."""
    expansions_applied: list[tuple[str, str]] = []
    expanded = user_input
    if glossary is not None:
        expanded, resolutions = glossary_expand(user_input, glossary)
        expansions_applied = [
            (r.acronym, " | ".join(r.expansions)) for r in resolutions if r.expansions
        ]
    expansion_lines = "\n".join(f"{a} = {e}" for a, e in expansions_applied) or "(none)"
    reply = _ask(gw, prompts.render(
        "reformulate",
        query=expanded,
        history=format_history(history),
        glossary_expansions=expansion_lines,
    ), "reformulate")

    is_continuation = False
    search_string = ""
    for line in reply.splitlines():
        stripped = line.strip()
        upper = stripped.upper()
        if upper.startswith("CONTINUATION:"):
            is_continuation = "yes" in stripped.lower().split(":", 1)[1]
        elif upper.startswith("QUERY:"):
            search_string = stripped.split(":", 1)[1].strip()
    if not search_string:
        search_string = reply.strip()
        if search_string and "CONTINUATION" in search_string.upper():
            search_string = ""
    if not search_string:
        warn("empty reformulation reply; falling back to the expanded original")
        search_string = expanded
    if not history:
        is_continuation = False
    return ReformulatedQuery(
        original=user_input,
        search_string=search_string,
        expansions_applied=expansions_applied,
        is_continuation=is_continuation,
    )


_LINE_MARKER_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+")


def generate_subqueries(
    query: str,
    context_so_far: Sequence[RetrievalHit],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn = _default_warn,
) -> SubQuerySet:
    """One call; the reply is parsed as one sub-query per line, deduplicated
    and capped at three. Fewer than two distinct lines are padded with the
    original query."""
    context_lines = "\n".join(
        f"- {h.chunk_id} (score {h.score:.3f})" for h in context_so_far
    ) or "(none)"
    reply = _ask(gw, prompts.render(
        "subquery", query=query, context=context_lines), "subquery")
    candidates = []
    for line in reply.splitlines():
        line = _LINE_MARKER_RE.sub("", line).strip()
        if line:
            candidates.append(line)
    sub_queries = list(dict.fromkeys(candidates))[:3]
    if len(sub_queries) < 2:
        warn(f"model produced {len(sub_queries)} sub-queries; padding with the original query")
        for pad in (query, f"{query} details"):
            if pad not in sub_queries:
                sub_queries.append(pad)
            if len(sub_queries) >= 2:
                break
    return SubQuerySet(sub_queries=sub_queries, derived_from=query)


_CITATION_RE = re.compile(r"\[(\d+)\]")


def synthesize(
    query: str,
    context: Sequence[RetrievalHit],
    chunks: Mapping[str, Chunk],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn = _default_warn,
) -> SynthesizedAnswer:
    """Fuse the context into a citation-style answer.

    Empty context short-circuits to the fixed insufficiency notice without a
    model call. Bracketed citation numbers map back to the source links of
    the supplied context; out-of-range numbers are dropped with a warning.
    """
    if not context:
        return SynthesizedAnswer(
            text=INSUFFICIENT_CONTEXT_NOTICE,
            citations=[],
            used_chunk_ids=[],
            insufficient_context=True,
        )
    reply = _ask(gw, prompts.render(
        "synthesize", query=query, context=format_context(context, chunks)), "synthesize")
    citations: list[str] = []
    used_chunk_ids: list[str] = []
    for match in _CITATION_RE.finditer(reply):
        number = int(match.group(1))
        if not (1 <= number <= len(context)):
            warn(f"citation [{number}] out of range 1..{len(context)}; dropped")
            continue
        hit = context[number - 1]
        if hit.source_link not in citations:
            citations.append(hit.source_link)
        if hit.chunk_id not in used_chunk_ids:
            used_chunk_ids.append(hit.chunk_id)
    return SynthesizedAnswer(
        text=reply,
        citations=citations,
        used_chunk_ids=used_chunk_ids,
        insufficient_context=INSUFFICIENT_CONTEXT_NOTICE in reply,
    )


def assess(
    query: str,
    answer: SynthesizedAnswer,
    context: Sequence[RetrievalHit],
    gw: Gateway,
    prompts: PromptLibrary,
    warn: WarnFn = _default_warn,
) -> QaAssessment:
    """Score the answer 0-10; an unparsable reply scores 0, which pushes the
    pipeline toward refinement rather than accepting junk."""
    context_lines = "\n".join(f"[{i}] {h.source_link}" for i, h in enumerate(context, 1)) or "(none)"
    reply = _ask(gw, prompts.render(
        "assess", query=query, answer=answer.text, context=context_lines), "assess")
    score = parse_first_int(reply, 0, 10)
    if score is None:
        warn(f"unparsable assessment reply {reply!r}; scoring 0")
        score = 0
    return QaAssessment(score=score, rationale=reply.strip())


def summarize_history(
    history: Sequence[ChatTurn],
    gw: Gateway,
    prompts: PromptLibrary,
) -> str:
    """Compress the conversation history into a short summary."""
    reply = _ask(gw, prompts.render(
        "history_summary", history=format_history(history)), "history_summary")
    return reply.strip()
