"""Clients for external model services: chat completion, embedding, and
re-ranking, plus deterministic backends for offline runs and tests.

The chat transport follows the common chat-completions HTTP convention
(model, messages[], temperature); base URL, model name and key come from
configuration. The scripted backend consumes an ordered transcript of
(tag_pattern, reply) entries and fails loudly when the script is exhausted
or the next entry does not match the issuing tag.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Protocol, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

Role = Literal["system", "user", "assistant"]


class GatewayError(Exception):
    """Base class for model-service failures."""


class TransportError(GatewayError):
    """A backend call failed after exhausting retries."""


class ScriptError(GatewayError):
    """The scripted backend ran out of entries or saw an unexpected tag."""


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("turn content must be non-empty")


@dataclass
class ModelRequest:
    turns: list[ChatTurn]
    temperature: float = 0.0
    max_tokens: int = 512
    tag: str = ""

    def validate(self) -> None:
        if not self.turns:
            raise ValueError("request needs at least one turn")
        if self.turns[-1].role != "user":
            raise ValueError("last turn must have role=user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass
class ModelResponse:
    text: str
    latency_ms: int
    backend_id: str


@dataclass
class RerankCandidate:
    chunk_id: str
    text: str
    relevance: float = 0.0


class Clock:
    """Wall-clock milliseconds; swap in FakeClock for deterministic runs."""

    def now_ms(self) -> int:
        return time.perf_counter_ns() // 1_000_000


class FakeClock(Clock):
    """Advances a fixed tick per reading; makes latencies reproducible."""

    def __init__(self, tick_ms: int = 1):
        self.tick_ms = tick_ms
        self._now = 0
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        with self._lock:
            self._now += self.tick_ms
            return self._now


class ChatBackend(Protocol):
    backend_id: str

    def send(self, req: ModelRequest) -> str: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class RerankBackend(Protocol):
    def score(self, query: str, texts: Sequence[str]) -> list[float]: ...


class HttpChatBackend:
    """Chat-completions endpoint client; bearer token read from the
    environment variable named by ``api_key_env`` (optional)."""

    def __init__(
        self,
        base_url: str,
        model: str,
        path: str = "/v1/chat/completions",
        api_key_env: str = "RAGKIT_API_KEY",
        timeout_s: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.path = path
        self.api_key_env = api_key_env
        self.backend_id = f"http:{model}"
        self._client = httpx.Client(timeout=timeout_s)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def send(self, req: ModelRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": t.role, "content": t.content} for t in req.turns],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        response = self._client.post(self.base_url + self.path, json=body, headers=self._headers())
        response.raise_for_status()
        data = response.json()
        return data["choices"][0]["message"]["content"]


@dataclass
class ScriptEntry:
    tag_pattern: str
    reply: str


def load_script(path: Path | str) -> list[ScriptEntry]:
    entries = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entries.append(ScriptEntry(record["tag_pattern"], record["reply"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ScriptError(f"bad script entry at {path}:{line_no}: {exc}") from exc
    return entries


def write_script(entries: Sequence[ScriptEntry | tuple[str, str]], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for entry in entries:
            if isinstance(entry, tuple):
                entry = ScriptEntry(*entry)
            fh.write(json.dumps(
                {"tag_pattern": entry.tag_pattern, "reply": entry.reply},
                ensure_ascii=False, sort_keys=True) + "\n")


class ScriptedChatBackend:
    """Replays an ordered transcript; consumption is serialized internally."""

    backend_id = "scripted"

    def __init__(self, entries: Sequence[ScriptEntry | tuple[str, str]]):
        self._entries = [e if isinstance(e, ScriptEntry) else ScriptEntry(*e) for e in entries]
        self._pos = 0
        self._lock = threading.Lock()
        self.requests_seen: list[ModelRequest] = []

    @classmethod
    def from_file(cls, path: Path | str) -> "ScriptedChatBackend":
        return cls(load_script(path))

    @property
    def remaining(self) -> int:
        return len(self._entries) - self._pos

    def send(self, req: ModelRequest) -> str:
        with self._lock:
            if self._pos >= len(self._entries):
                raise ScriptError(f"script exhausted at tag {req.tag!r}")
            entry = self._entries[self._pos]
            if not re.fullmatch(entry.tag_pattern, req.tag):
                raise ScriptError(
                    f"script mismatch at entry {self._pos}: "
                    f"expected tag pattern {entry.tag_pattern!r}, got {req.tag!r}"
                )
            self._pos += 1
            self.requests_seen.append(req)
            return entry.reply


class HttpEmbeddingBackend:
    """Embeddings endpoint client: {input: [...]} -> {data: [{embedding}]}."""

    def __init__(
        self,
        base_url: str,
        model: str = "",
        path: str = "/v1/embeddings",
        api_key_env: str = "RAGKIT_API_KEY",
        timeout_s: float = 60.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.path = path
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout_s)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        body: dict = {"input": list(texts)}
        if self.model:
            body["model"] = self.model
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        response = self._client.post(self.base_url + self.path, json=body, headers=headers)
        response.raise_for_status()
        data = response.json()
        return [np.asarray(item["embedding"], dtype=np.float64) for item in data["data"]]


class HashingEmbedder:
    """Deterministic local embedder: signed token-bucket counts.

    Equal texts always map to equal vectors, which is what scripted runs and
    persistence tests rely on. Not a semantic model; shared vocabulary is the
    only similarity signal.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.calls: list[int] = []

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        self.calls.append(len(texts))
        vectors = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for token in text.lower().split():
                digest = hashlib.blake2s(token.encode("utf-8")).digest()
                h = int.from_bytes(digest[:8], "big")
                sign = 1.0 if digest[8] % 2 == 0 else -1.0
                vec[h % self.dim] += sign
            if not vec.any():
                digest = hashlib.blake2s(text.encode("utf-8")).digest()
                vec[int.from_bytes(digest[:8], "big") % self.dim] = 1.0
            vectors.append(vec)
        return vectors


class HttpRerankBackend:
    """Cross-encoder endpoint client: {query, documents[]} -> {scores[]}."""

    def __init__(self, url: str, api_key_env: str = "RAGKIT_API_KEY", timeout_s: float = 60.0):
        self.url = url
        self.api_key_env = api_key_env
        self._client = httpx.Client(timeout=timeout_s)

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        response = self._client.post(
            self.url, json={"query": query, "documents": list(texts)}, headers=headers
        )
        response.raise_for_status()
        scores = response.json()["scores"]
        if len(scores) != len(texts):
            raise TransportError("rerank endpoint returned wrong score count")
        return [float(s) for s in scores]


_SCORE_RE = re.compile(r"(?<!\d)(\d{1,2})(?!\d)")


def parse_first_int(text: str, lo: int, hi: int) -> int | None:
    """First standalone integer within [lo, hi], or None."""
    for match in _SCORE_RE.finditer(text):
        value = int(match.group(1))
        if lo <= value <= hi:
            return value
    return None


@dataclass
class Gateway:
    """Uniform front for chat, embedding, and re-ranking backends.

    Safe for concurrent use; ``completions`` and ``embed_calls`` count
    backend invocations for budget accounting and tests.
    """

    chat: ChatBackend | None = None
    embedder: EmbeddingBackend | None = None
    rerank_backend: RerankBackend | None = None
    llm_retries: int = 2
    embed_retries: int = 2
    embed_batch: int = 32
    llm_parallelism: int = 4
    embed_parallelism: int = 4
    retry_base_delay_s: float = 0.05
    rerank_prompt: str = (
        "Rate how relevant the passage is to the query on an integer scale "
        "from 0 (unrelated) to 10 (directly answers it). Reply with the "
        "number only.\n\nQuery: {query}\n\nPassage: {passage}"
    )
    clock: Clock = field(default_factory=Clock)
    completions: int = 0
    embed_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, req: ModelRequest) -> ModelResponse:
        """Send one chat request, retrying transport failures with backoff."""
        if self.chat is None:
            raise GatewayError("no chat backend configured")
        req.validate()
        last_error: Exception | None = None
        for attempt in range(self.llm_retries + 1):
            if attempt > 0:
                time.sleep(self.retry_base_delay_s * (2 ** (attempt - 1)))
            start = self.clock.now_ms()
            try:
                text = self.chat.send(req)
            except ScriptError:
                raise
            except Exception as exc:
                last_error = exc
                logger.warning("chat call failed (tag=%s, attempt %d): %s", req.tag, attempt + 1, exc)
                continue
            latency = self.clock.now_ms() - start
            with self._lock:
                self.completions += 1
            return ModelResponse(text=text, latency_ms=max(0, latency),
                                 backend_id=self.chat.backend_id)
        raise TransportError(f"chat call failed for tag {req.tag!r}: {last_error}")

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed texts order-preservingly, splitting into backend batches."""
        if self.embedder is None:
            raise GatewayError("no embedding backend configured")
        if not texts:
            return []
        for text in texts:
            if not text.strip():
                raise GatewayError("cannot embed empty text")
        batches = [texts[i : i + self.embed_batch] for i in range(0, len(texts), self.embed_batch)]

        def run_batch(batch: Sequence[str]) -> list[np.ndarray]:
            last_error: Exception | None = None
            for attempt in range(self.embed_retries + 1):
                if attempt > 0:
                    time.sleep(self.retry_base_delay_s * (2 ** (attempt - 1)))
                try:
                    result = self.embedder.embed(batch)
                except Exception as exc:
                    last_error = exc
                    logger.warning("embed batch failed (attempt %d): %s", attempt + 1, exc)
                    continue
                if len(result) != len(batch):
                    raise TransportError("embedding backend returned wrong vector count")
                with self._lock:
                    self.embed_calls += 1
                return result
            raise TransportError(f"embedding failed after retries: {last_error}")

        if len(batches) == 1:
            return run_batch(batches[0])
        with ThreadPoolExecutor(max_workers=max(1, self.embed_parallelism)) as pool:
            results = list(pool.map(run_batch, batches))
        return [vec for batch in results for vec in batch]

    def rerank(
        self,
        query: str,
        candidates: Sequence[RerankCandidate],
        *,
        complete: Callable[[ModelRequest], ModelResponse] | None = None,
        on_warning: Callable[[str], None] | None = None,
    ) -> list[RerankCandidate]:
        """Reorder candidates by relevance to the query, descending.

        Uses the dedicated cross-encoder endpoint when configured, otherwise
        scores each candidate with one pairwise chat call (integer 0-10
        parsed from the reply; unparsable scores become 0 with a warning).
        Ties break by ascending chunk id. The output is a permutation of the
        input.
        """
        if not candidates:
            raise GatewayError("rerank needs at least one candidate")
        warn = on_warning or (lambda msg: logger.warning("%s", msg))
        if self.rerank_backend is not None:
            scores = self.rerank_backend.score(query, [c.text for c in candidates])
            scored = [
                RerankCandidate(c.chunk_id, c.text, float(s))
                for c, s in zip(candidates, scores)
            ]
        else:
            send = complete or self.complete
            scored = []
            for candidate in candidates:
                prompt = self.rerank_prompt.replace("{query}", query).replace(
                    "{passage}", candidate.text
                )
                response = send(ModelRequest(
                    turns=[ChatTurn("user", prompt)], tag="rerank"))
                value = parse_first_int(response.text, 0, 10)
                if value is None:
                    warn(f"unparsable rerank score for {candidate.chunk_id}: {response.text!r}")
                    value = 0
                scored.append(RerankCandidate(candidate.chunk_id, candidate.text, float(value)))
        return sorted(scored, key=lambda c: (-c.relevance, c.chunk_id))
