from __future__ import annotations

from pathlib import Path

import pytest

from ragkit.agents import PromptLibrary
from ragkit.corpus import Chunk
from ragkit.gateway import FakeClock, Gateway, HashingEmbedder, ScriptedChatBackend
from ragkit.glossary import AcronymEntry, Glossary

REPO_ROOT = Path(__file__).resolve().parents[1]
TOY_DIR = REPO_ROOT / "data" / "toy"


@pytest.fixture(scope="session")
def prompts() -> PromptLibrary:
    return PromptLibrary()


@pytest.fixture
def toy_corpus_dir() -> Path:
    return TOY_DIR / "corpus"


@pytest.fixture
def toy_glossary() -> Glossary:
    return Glossary.load(TOY_DIR / "glossary.jsonl")


@pytest.fixture
def cma_glossary() -> Glossary:
    return Glossary([
        AcronymEntry("CMA", ("Consumer Management Application",
                             "Cardholder Management Architecture")),
        AcronymEntry("MDES", ("Mastercard Digital Enablement Service",)),
        AcronymEntry("IRRBB", ("Interest Rate Risk in the Banking Book",)),
        AcronymEntry("CVaR", ("Conditional Value at Risk",)),
    ])


def make_chunk(chunk_id: str, text: str, link: str | None = None,
               doc_id: str | None = None, seq: int = 0) -> Chunk:
    return Chunk(
        chunk_id=chunk_id,
        doc_id=doc_id or chunk_id.split("#")[0],
        seq=seq,
        text=text,
        word_count=len(text.split()),
        source_link=link or (doc_id or chunk_id.split("#")[0]),
    )


def scripted_gateway(entries, *, dim: int = 64, clock: FakeClock | None = None,
                     rerank_backend=None) -> Gateway:
    """Gateway wired to a scripted chat backend and the hashing embedder."""
    return Gateway(
        chat=ScriptedChatBackend(entries),
        embedder=HashingEmbedder(dim=dim),
        rerank_backend=rerank_backend,
        llm_retries=0,
        clock=clock or FakeClock(),
    )
