#!/usr/bin/env python3
"""Record real service responses into frontend test fixtures.

Drives the FastAPI app with the scripted backend and dumps each response
body to frontend/tests/fixtures/, so the UI tests replay exactly what the
service produces. Re-run after changing the service contract:

    python3 scripts/record_ui_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi.testclient import TestClient

from ragkit.agents import PromptLibrary
from ragkit.config import EngineConfig
from ragkit.corpus import Chunk
from ragkit.engine import Engine
from ragkit.gateway import FakeClock, Gateway, HashingEmbedder, ScriptedChatBackend
from ragkit.glossary import AcronymEntry, Glossary
from ragkit.index import VectorIndex
from ragkit.orchestrator import sequential_run_ids
from ragkit.service import create_app

FIXTURES = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures"

CHUNK_TEXTS = {
    "risk.md#0": "CVaR conditional value at risk confidence level horizon limits",
    "risk.md#1": "interest rate risk banking book weekly measurement policy",
    "tokens.md#0": "token lifecycle active suspended deleted states vault",
    "ledger.md#0": "ledger double entry postings debit credit value date",
}


class LengthRerank:
    def score(self, query, texts):
        return [float(len(t)) for t in texts]


def make_engine(entries, tmp: Path) -> Engine:
    chunks = {
        cid: Chunk(chunk_id=cid, doc_id=cid.split("#")[0], seq=int(cid.split("#")[1]),
                   text=text, word_count=len(text.split()),
                   source_link=f"https://kb/{cid.split('.')[0]}")
        for cid, text in CHUNK_TEXTS.items()
    }
    embedder = HashingEmbedder(dim=64)
    clock = FakeClock()
    return Engine(
        config=EngineConfig.model_validate({"pipeline": {"top_k": 3},
                                            "deterministic": True}),
        gateway=Gateway(chat=ScriptedChatBackend(entries), embedder=embedder,
                        rerank_backend=LengthRerank(), llm_retries=0, clock=clock),
        prompts=PromptLibrary(),
        glossary=Glossary([
            AcronymEntry("CMA", ("Consumer Management Application",
                                 "Cardholder Management Architecture")),
            AcronymEntry("CVaR", ("Conditional Value at Risk",)),
        ]),
        chunks=chunks,
        index=VectorIndex.build(list(chunks.values()), embedder),
        clock=clock,
        run_log_path=tmp / "runs.jsonl",
        run_id_factory=sequential_run_ids(),
    )


ARAG_OK = [
    ("intent", "retrieval"),
    ("reformulate", "CONTINUATION: no\nQUERY: CVaR CMA risk limits"),
    ("synthesize", "CVaR is capped per the risk policy [1]."),
    ("assess", "8"),
]

ARAG_FALLBACK = [
    ("intent", "retrieval"),
    ("reformulate", "CONTINUATION: no\nQUERY: CVaR CMA risk limits"),
    ("synthesize", "Weak first answer [1]."),
    ("assess", "4"),
    ("subquery", "CVaR formula\nrisk quantification"),
    ("synthesize", "Slightly better answer [1]."),
    ("assess", "5"),
    ("synthesize", "Third attempt [1]."),
    ("assess", "5"),
]

BRAG_OK = [
    ("reformulate", "CONTINUATION: no\nQUERY: token lifecycle states"),
    ("synthesize", "Tokens move through lifecycle states [1]."),
]


def dump(name: str, data) -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    (FIXTURES / name).write_text(
        json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    print(f"wrote {name}")


def main() -> None:
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        tmp_path = Path(tmp)
        engine = make_engine(ARAG_OK + ARAG_FALLBACK + BRAG_OK, tmp_path)
        client = TestClient(create_app(engine))

        session = client.post("/v1/sessions", json={"mode_default": "arag"}).json()
        dump("session.json", session)
        session_id = session["session_id"]

        ask_arag = client.post(f"/v1/sessions/{session_id}/ask",
                               json={"question": "How do CVaR and CMA limits interact?"})
        dump("ask_arag.json", ask_arag.json())
        dump("run_arag.json", client.get(f"/v1/runs/{ask_arag.json()['run_id']}").json())

        fallback_session = client.post("/v1/sessions", json={"mode_default": "arag"}).json()
        ask_fallback = client.post(f"/v1/sessions/{fallback_session['session_id']}/ask",
                                   json={"question": "Something the corpus lacks?"})
        dump("ask_fallback.json", ask_fallback.json())
        dump("run_fallback.json",
             client.get(f"/v1/runs/{ask_fallback.json()['run_id']}").json())

        brag_session = client.post("/v1/sessions", json={"mode_default": "brag"}).json()
        ask_brag = client.post(f"/v1/sessions/{brag_session['session_id']}/ask",
                               json={"question": "What states does a token have?"})
        dump("ask_brag.json", ask_brag.json())
        dump("run_brag.json", client.get(f"/v1/runs/{ask_brag.json()['run_id']}").json())

        dump("health.json", client.get("/v1/health").json())

        missing = client.get("/v1/runs/ghost")
        dump("error_not_found.json", missing.json())

        failing_engine = make_engine([("intent", "retrieval")], tmp_path)
        failing_client = TestClient(create_app(failing_engine),
                                    raise_server_exceptions=False)
        failing_session = failing_client.post("/v1/sessions", json={}).json()
        failure = failing_client.post(
            f"/v1/sessions/{failing_session['session_id']}/ask",
            json={"question": "boom?"})
        dump("error_pipeline.json", failure.json())


if __name__ == "__main__":
    main()
