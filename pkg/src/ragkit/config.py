"""Engine configuration: one YAML file validated strictly (unknown keys are
rejected), with CLI flags layered on top where commands support them.
Secrets (endpoint keys) come only from environment variables named here.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError


class ConfigError(Exception):
    """Raised on unreadable or invalid configuration files."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ChunkingSection(_Section):
    target_words: int = 100
    overlap_words: int = 20


class PipelineSection(_Section):
    mode: Literal["brag", "arag"] = "arag"
    top_k: int = 5
    qa_threshold: int = 6
    max_refinements: int = 2
    broad_sweep_multiplier: int = 3
    low_retrieval_score: float = 0.35
    completion_budget: int = 64
    history_turns: int = 10


class GatewaySection(_Section):
    backend: Literal["http", "scripted"] = "http"
    chat_base_url: str = "http://localhost:8000"
    chat_path: str = "/v1/chat/completions"
    chat_model: str = "llama-3.1-8b-instruct"
    api_key_env: str = "RAGKIT_API_KEY"
    script_path: Optional[str] = None
    temperature: float = 0.0
    max_tokens: int = 512
    llm_retries: int = 2
    llm_parallelism: int = 4
    timeout_s: float = 60.0
    embedder: Literal["hash", "http"] = "hash"
    embed_dim: int = 256
    embed_base_url: Optional[str] = None
    embed_path: str = "/v1/embeddings"
    embed_model: str = ""
    embed_batch: int = 32
    embed_retries: int = 2
    embed_parallelism: int = 4
    rerank_url: Optional[str] = None


class PathsSection(_Section):
    corpus_dir: str = "corpus"
    chunk_store: str = "artifacts/chunks.jsonl"
    stats_file: str = "artifacts/stats.json"
    index_file: str = "artifacts/index.jsonl"
    glossary_file: Optional[str] = None
    run_log: str = "artifacts/runs.jsonl"
    prompts_dir: Optional[str] = None


class EngineConfig(_Section):
    chunking: ChunkingSection = ChunkingSection()
    pipeline: PipelineSection = PipelineSection()
    gateway: GatewaySection = GatewaySection()
    paths: PathsSection = PathsSection()
    deterministic: bool = False


def load_config(path: Path | str | None) -> EngineConfig:
    """Load and validate a YAML config; a missing path yields defaults."""
    if path is None:
        return EngineConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping: {path}")
    try:
        return EngineConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def resolve_path(base: Path, value: str) -> Path:
    """Paths in the config resolve relative to the config file's directory."""
    p = Path(value)
    return p if p.is_absolute() else base / p
