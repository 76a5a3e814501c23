"""Exact top-k cosine-similarity retrieval over embedded chunks.

The index is a plain matrix scanned exhaustively: at the corpus scales this
engine targets (tens of thousands of chunks) a brute-force scan is fast, and
evaluation metrics need fully deterministic rankings. Ties break by ascending
chunk id.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .corpus import Chunk

logger = logging.getLogger(__name__)


class IndexError_(Exception):
    """Raised on index build, persistence, or query failures."""


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    source_link: str
    score: float
    rank: int


def cosine(a, b) -> float:
    """Cosine similarity of two equal-dimension, non-zero vectors."""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise IndexError_(f"dimension mismatch: {va.shape} vs {vb.shape}")
    if not (np.isfinite(va).all() and np.isfinite(vb).all()):
        raise IndexError_("non-finite vector component")
    na = float(np.dot(va, va))
    nb = float(np.dot(vb, vb))
    if na == 0.0 or nb == 0.0:
        raise IndexError_("undefined similarity: zero vector")
    if np.array_equal(va, vb):
        return 1.0
    value = float(np.dot(va, vb)) / float(np.sqrt(na * nb))
    return max(-1.0, min(1.0, value))


def _check_unique(chunk_ids: Sequence[str]) -> None:
    if len(set(chunk_ids)) != len(chunk_ids):
        counts = Counter(chunk_ids)
        dupes = sorted(c for c, n in counts.items() if n > 1)
        raise IndexError_(f"duplicate chunk_id: {', '.join(dupes[:5])}")


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise IndexError_("undefined similarity: zero vector in index")
    return matrix / norms


class VectorIndex:
    """Immutable exact-scan vector index keyed by chunk id.

    Stored vectors are L2-normalized on insert. ``links`` maps chunk ids to
    their source links for populating retrieval hits; it is rebuilt from the
    chunk store after ``load`` via :meth:`attach_links`.
    """

    def __init__(self, chunk_ids: Sequence[str], matrix: np.ndarray,
                 links: Mapping[str, str] | None = None,
                 pre_normalized: bool = False):
        if len(chunk_ids) != matrix.shape[0]:
            raise IndexError_("chunk_ids and matrix row count differ")
        _check_unique(chunk_ids)
        self._ids = list(chunk_ids)
        matrix = np.asarray(matrix, dtype=np.float64)
        if len(chunk_ids) and not pre_normalized:
            matrix = _normalize_rows(matrix)
        self._matrix = matrix
        self._links = dict(links) if links else {}

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1]) if self._matrix.ndim == 2 else 0

    @property
    def chunk_ids(self) -> list[str]:
        return list(self._ids)

    def attach_links(self, source: Mapping[str, str] | Iterable[Chunk]) -> None:
        if isinstance(source, Mapping):
            self._links = dict(source)
        else:
            self._links = {c.chunk_id: c.source_link for c in source}

    @classmethod
    def build(
        cls,
        chunks: Sequence[Chunk],
        embedder: EmbeddingBackend,
        *,
        embed_batch: int = 32,
        embed_retries: int = 2,
        embed_parallelism: int = 4,
    ) -> "VectorIndex":
        """Embed every chunk and assemble the index.

        Batches of ``embed_batch`` texts may run in parallel; each failed
        batch is retried up to ``embed_retries`` times before the whole build
        fails listing the affected chunk ids.
        """
        ids = [c.chunk_id for c in chunks]
        _check_unique(ids)
        for chunk in chunks:
            if not chunk.text.strip():
                raise IndexError_(f"empty chunk text: {chunk.chunk_id}")
        if not chunks:
            return cls([], np.zeros((0, 0)))

        batches = [chunks[i : i + embed_batch] for i in range(0, len(chunks), embed_batch)]

        def embed_batch_with_retry(batch: Sequence[Chunk]) -> list[np.ndarray] | None:
            texts = [c.text for c in batch]
            for attempt in range(embed_retries + 1):
                try:
                    return embedder.embed(texts)
                except Exception as exc:  # transport-level failure, retry whole batch
                    logger.warning("embedding batch failed (attempt %d): %s", attempt + 1, exc)
            return None

        with ThreadPoolExecutor(max_workers=max(1, embed_parallelism)) as pool:
            results = list(pool.map(embed_batch_with_retry, batches))

        failed: list[str] = []
        vectors: list[np.ndarray] = []
        for batch, result in zip(batches, results):
            if result is None:
                failed.extend(c.chunk_id for c in batch)
            else:
                vectors.extend(np.asarray(v, dtype=np.float64) for v in result)
        if failed:
            raise IndexError_(f"embedding failed for chunks: {', '.join(failed)}")

        dims = {v.shape[0] for v in vectors}
        if len(dims) != 1:
            raise IndexError_(f"inconsistent embedding dimensions: {sorted(dims)}")
        matrix = np.vstack(vectors)
        return cls(ids, matrix, links={c.chunk_id: c.source_link for c in chunks})

    def search(self, query_vec, k: int) -> list[RetrievalHit]:
        """Exact top-k by cosine score; deterministic ascending-id tie-break."""
        if k < 1:
            raise IndexError_("k must be >= 1")
        if len(self) == 0:
            return []
        q = np.asarray(query_vec, dtype=np.float64)
        if q.shape != (self.dim,):
            raise IndexError_(f"dimension mismatch: query {q.shape} vs index dim {self.dim}")
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise IndexError_("undefined similarity: zero query vector")
        scores = self._matrix @ (q / norm)
        order = sorted(range(len(self)), key=lambda i: (-scores[i], self._ids[i]))[:k]
        hits = []
        for rank, i in enumerate(order, start=1):
            score = max(-1.0, min(1.0, float(scores[i])))
            chunk_id = self._ids[i]
            hits.append(
                RetrievalHit(
                    chunk_id=chunk_id,
                    source_link=self._links.get(chunk_id, chunk_id),
                    score=score,
                    rank=rank,
                )
            )
        return hits

    def save(self, path: Path | str) -> None:
        """Persist as a header record followed by one record per entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            header = {"count": len(self), "dim": self.dim, "normalized": True}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for chunk_id, row in zip(self._ids, self._matrix):
                record = {"chunk_id": chunk_id, "values": row.tolist()}
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "VectorIndex":
        path = Path(path)
        if not path.is_file():
            raise IndexError_(f"index file not found: {path}")
        with path.open("r", encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
            except json.JSONDecodeError as exc:
                raise IndexError_(f"bad index header in {path}: {exc}") from exc
            ids: list[str] = []
            rows: list[list[float]] = []
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                ids.append(record["chunk_id"])
                rows.append(record["values"])
        if len(ids) != header.get("count"):
            raise IndexError_(
                f"index entry count {len(ids)} != header count {header.get('count')}"
            )
        if not ids:
            return cls([], np.zeros((0, header.get("dim", 0))))
        matrix = np.asarray(rows, dtype=np.float64)
        if matrix.shape[1] != header.get("dim"):
            raise IndexError_("index dim mismatch with header")
        return cls(ids, matrix, pre_normalized=bool(header.get("normalized")))
