"""Engine assembly: builds the gateway, glossary, chunk store, and vector
index from configuration and exposes the ask/trace surface shared by the
CLI, the chat REPL, and the HTTP service.
"""

from __future__ import annotations

import logging
import threading
from pathlib import Path
from typing import Mapping, Sequence

from .agents import PromptLibrary
from .config import EngineConfig, resolve_path
from .corpus import Chunk, read_chunk_store
from .gateway import (
    ChatTurn,
    Clock,
    FakeClock,
    Gateway,
    HashingEmbedder,
    HttpChatBackend,
    HttpEmbeddingBackend,
    HttpRerankBackend,
    ScriptedChatBackend,
)
from .glossary import Glossary
from .index import VectorIndex
from .orchestrator import (
    Mode,
    PipelineConfig,
    PipelineDeps,
    PipelineError,
    PipelineRun,
    append_run,
    read_run_log,
    run_pipeline,
    sequential_run_ids,
)

logger = logging.getLogger(__name__)


class EngineError(Exception):
    """A prerequisite artifact is missing; the message names the command
    that produces it."""


def build_gateway(cfg: EngineConfig, base_dir: Path, clock: Clock) -> Gateway:
    gw_cfg = cfg.gateway
    if gw_cfg.backend == "scripted":
        if not gw_cfg.script_path:
            raise EngineError("gateway.backend is 'scripted' but gateway.script_path is unset")
        chat = ScriptedChatBackend.from_file(resolve_path(base_dir, gw_cfg.script_path))
    else:
        chat = HttpChatBackend(
            base_url=gw_cfg.chat_base_url,
            model=gw_cfg.chat_model,
            path=gw_cfg.chat_path,
            api_key_env=gw_cfg.api_key_env,
            timeout_s=gw_cfg.timeout_s,
        )
    if gw_cfg.embedder == "http":
        if not gw_cfg.embed_base_url:
            raise EngineError("gateway.embedder is 'http' but gateway.embed_base_url is unset")
        embedder = HttpEmbeddingBackend(
            base_url=gw_cfg.embed_base_url,
            model=gw_cfg.embed_model,
            path=gw_cfg.embed_path,
            api_key_env=gw_cfg.api_key_env,
            timeout_s=gw_cfg.timeout_s,
        )
    else:
        embedder = HashingEmbedder(dim=gw_cfg.embed_dim)
    rerank_backend = None
    if gw_cfg.rerank_url:
        rerank_backend = HttpRerankBackend(gw_cfg.rerank_url, api_key_env=gw_cfg.api_key_env,
                                           timeout_s=gw_cfg.timeout_s)
    return Gateway(
        chat=chat,
        embedder=embedder,
        rerank_backend=rerank_backend,
        llm_retries=gw_cfg.llm_retries,
        embed_retries=gw_cfg.embed_retries,
        embed_batch=gw_cfg.embed_batch,
        llm_parallelism=gw_cfg.llm_parallelism,
        embed_parallelism=gw_cfg.embed_parallelism,
        clock=clock,
    )


class Engine:
    """One loaded engine instance: immutable artifacts plus a run store."""

    def __init__(
        self,
        config: EngineConfig,
        gateway: Gateway,
        prompts: PromptLibrary,
        glossary: Glossary | None,
        chunks: Mapping[str, Chunk],
        index: VectorIndex | None,
        clock: Clock,
        run_log_path: Path | None,
        run_id_factory=None,
        corpus_dir: Path | None = None,
    ):
        self.config = config
        self.gateway = gateway
        self.prompts = prompts
        self.glossary = glossary
        self.chunks = dict(chunks)
        self.index = index
        self.clock = clock
        self.run_log_path = run_log_path
        self.corpus_dir = corpus_dir
        self._runs: dict[str, PipelineRun] = {}
        self._log_lock = threading.Lock()
        deterministic = config.deterministic
        self._run_ids = run_id_factory or (sequential_run_ids() if deterministic else None)

    @classmethod
    def from_config(cls, config: EngineConfig, base_dir: Path | str,
                    require_index: bool = True) -> "Engine":
        base_dir = Path(base_dir)
        clock: Clock = FakeClock() if config.deterministic else Clock()
        gateway = build_gateway(config, base_dir, clock)
        prompts = PromptLibrary(
            resolve_path(base_dir, config.paths.prompts_dir) if config.paths.prompts_dir else None
        )
        glossary = None
        if config.paths.glossary_file:
            glossary_path = resolve_path(base_dir, config.paths.glossary_file)
            if glossary_path.is_file():
                glossary = Glossary.load(glossary_path)
            else:
                logger.warning("glossary file not found: %s; continuing without", glossary_path)

        chunks: dict[str, Chunk] = {}
        index = None
        chunk_store = resolve_path(base_dir, config.paths.chunk_store)
        index_file = resolve_path(base_dir, config.paths.index_file)
        if require_index:
            if not chunk_store.is_file():
                raise EngineError(
                    f"chunk store not found at {chunk_store}; run `ragkit ingest` first"
                )
            if not index_file.is_file():
                raise EngineError(
                    f"index not found at {index_file}; run `ragkit index` first"
                )
            chunk_list = read_chunk_store(chunk_store)
            chunks = {c.chunk_id: c for c in chunk_list}
            index = VectorIndex.load(index_file)
            index.attach_links(chunk_list)

        return cls(
            config=config,
            gateway=gateway,
            prompts=prompts,
            glossary=glossary,
            chunks=chunks,
            index=index,
            clock=clock,
            run_log_path=resolve_path(base_dir, config.paths.run_log),
            corpus_dir=resolve_path(base_dir, config.paths.corpus_dir),
        )

    def pipeline_config(self, mode: Mode | None = None) -> PipelineConfig:
        p = self.config.pipeline
        return PipelineConfig(
            mode=mode or p.mode,
            top_k=p.top_k,
            qa_threshold=p.qa_threshold,
            max_refinements=p.max_refinements,
            broad_sweep_multiplier=p.broad_sweep_multiplier,
            low_retrieval_score=p.low_retrieval_score,
            completion_budget=p.completion_budget,
            history_turns=p.history_turns,
        )

    def deps(self) -> PipelineDeps:
        if self.index is None:
            raise EngineError("engine loaded without an index; run `ragkit index` first")
        deps = PipelineDeps(
            index=self.index,
            chunks=self.chunks,
            gateway=self.gateway,
            prompts=self.prompts,
            glossary=self.glossary,
            clock=self.clock,
        )
        if self._run_ids is not None:
            deps.run_id_factory = self._run_ids
        return deps

    def ask(self, question: str, history: Sequence[ChatTurn] = (),
            mode: Mode | None = None) -> PipelineRun:
        """Run one question through the selected pipeline; the run record is
        stored and appended to the run log whether it succeeds or fails."""
        cfg = self.pipeline_config(mode)
        truncated = list(history)[-cfg.history_turns:]
        try:
            run = run_pipeline(question, truncated, cfg, self.deps())
        except PipelineError as exc:
            if exc.run is not None:
                self._record(exc.run)
            raise
        self._record(run)
        return run

    def _record(self, run: PipelineRun) -> None:
        self._runs[run.run_id] = run
        if self.run_log_path is not None:
            with self._log_lock:
                append_run(run, self.run_log_path)

    def get_run(self, run_id: str) -> PipelineRun | None:
        run = self._runs.get(run_id)
        if run is not None:
            return run
        if self.run_log_path is not None and self.run_log_path.is_file():
            for logged in read_run_log(self.run_log_path):
                if logged.run_id == run_id:
                    return logged
        return None

    @property
    def index_size(self) -> int:
        return len(self.index) if self.index is not None else 0

    @property
    def glossary_size(self) -> int:
        return len(self.glossary) if self.glossary is not None else 0
