"""Markup ingestion: linearize documents, split them into overlapping chunks,
and compute corpus-level statistics.

The supported markup subset is headings, pipe tables, fenced code blocks,
lists and plain paragraphs; anything else passes through as plain text.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

logger = logging.getLogger(__name__)

MARKUP_EXTENSIONS = (".md", ".markdown", ".txt")

# Fixed ~50-entry stop-word list used for top-term statistics only.
# Deliberately excludes single-letter words so that degenerate test corpora
# still produce counts. Documented in the README.
STOP_WORDS = frozenset({
    "the", "of", "to", "and", "in", "is", "it", "you", "that", "he",
    "was", "for", "on", "are", "with", "as", "his", "they", "be", "at",
    "one", "have", "this", "from", "or", "had", "by", "not", "but", "what",
    "all", "were", "we", "when", "your", "can", "said", "there", "use", "an",
    "each", "which", "she", "do", "how", "their", "if", "will", "up", "other",
})

HISTOGRAM_BUCKET_WORDS = 10
TOP_TERMS_COUNT = 20

_LINK_DIRECTIVE_RE = re.compile(r"^<!--\s*link:\s*(.+?)\s*-->\s*$")
_HEADING_RE = re.compile(r"^#{1,6}\s+(.*)$")
_TABLE_ROW_RE = re.compile(r"^\s*\|.*\|\s*$")
_TABLE_SEP_RE = re.compile(r"^\s*\|[\s:\-|]+\|\s*$")
_FENCE_RE = re.compile(r"^\s*```")
_LIST_ITEM_RE = re.compile(r"^\s*(?:[-*+]|\d+[.)])\s+(.*)$")

# Signature left behind by table linearization ("col: val; col: val"),
# used by the evaluation module to pick the table prompt template.
TABLE_SIGNATURE_RE = re.compile(r"[^\s;:][^;:\n]*: [^;\n]*; [^\s;:][^;:\n]*: ")


class CorpusError(Exception):
    """Raised when a corpus cannot be built or loaded."""


@dataclass(frozen=True)
class Document:
    """One source file, linearized to plain text."""

    doc_id: str
    title: str
    body: str
    source_link: str


@dataclass(frozen=True)
class Chunk:
    """One overlapping text segment of a document; the retrieval unit."""

    chunk_id: str
    doc_id: str
    seq: int
    text: str
    word_count: int
    source_link: str


@dataclass(frozen=True)
class ChunkingConfig:
    target_words: int = 100
    overlap_words: int = 20

    def __post_init__(self) -> None:
        if self.target_words < 1:
            raise ValueError("target_words must be positive")
        if self.overlap_words < 0:
            raise ValueError("overlap_words must be non-negative")
        if self.overlap_words >= self.target_words:
            raise ValueError("overlap_words must be smaller than target_words")

    @property
    def stride(self) -> int:
        return self.target_words - self.overlap_words


@dataclass
class CorpusStats:
    doc_count: int
    chunk_count: int
    mean_chunks_per_doc: float
    chunk_length_histogram: list[tuple[int, int]]
    top_terms: list[tuple[str, int]]


def _split_table_row(line: str) -> list[str]:
    inner = line.strip()
    inner = inner.removeprefix("|").removesuffix("|")
    return [cell.strip() for cell in inner.split("|")]


def linearize(markup_text: str, warnings: list[str] | None = None) -> str:
    """Convert the supported markup subset to linear plain text.

    Headings lose their markers, each pipe-table data row becomes one
    "col: cell; col: cell" line keyed by the header row, fenced code lines
    get a "code: " prefix, and list markers are stripped. Blank-line
    paragraph structure is preserved. The transform is idempotent.

    Malformed table rows (width != header width) are padded or truncated
    and recorded in ``warnings`` instead of failing ingestion.
    """
    out: list[str] = []
    lines = markup_text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    in_fence = False
    table_header: list[str] | None = None

    for raw in lines:
        line = raw.rstrip()

        if in_fence:
            if _FENCE_RE.match(line):
                in_fence = False
            else:
                out.append(("code: " + line).rstrip())
            continue

        if _FENCE_RE.match(line):
            in_fence = True
            table_header = None
            continue

        if _TABLE_ROW_RE.match(line):
            if _TABLE_SEP_RE.match(line):
                continue
            cells = _split_table_row(line)
            if table_header is None:
                table_header = cells
                continue
            if len(cells) != len(table_header):
                if warnings is not None:
                    warnings.append(
                        f"table row width {len(cells)} != header width "
                        f"{len(table_header)}: {line.strip()!r}"
                    )
                cells = (cells + [""] * len(table_header))[: len(table_header)]
            out.append("; ".join(f"{k}: {v}" for k, v in zip(table_header, cells)).rstrip())
            continue
        table_header = None

        heading = _HEADING_RE.match(line)
        if heading:
            out.append(heading.group(1).strip())
            continue

        item = _LIST_ITEM_RE.match(line)
        while item:
            line = item.group(1)
            item = _LIST_ITEM_RE.match(line)
        out.append(line)

    return "\n".join(out).strip()


def chunk_count_for(word_count: int, cfg: ChunkingConfig) -> int:
    """Number of chunks a document of ``word_count`` words yields.

    ceil(max(0, W - overlap) / stride), floored at one chunk for any
    non-empty document (a document shorter than the window is one chunk).
    """
    if word_count <= 0:
        return 0
    effective = word_count - cfg.overlap_words
    if effective <= 0:
        return 1
    return math.ceil(effective / cfg.stride)


def chunk_document(doc: Document, cfg: ChunkingConfig) -> list[Chunk]:
    """Split a document into overlapping whitespace-token windows.

    Consecutive chunks share exactly ``cfg.overlap_words`` tokens; only the
    final chunk may be shorter than ``cfg.target_words``. An empty body
    yields an empty list.
    """
    tokens = doc.body.split()
    if not tokens:
        return []
    count = chunk_count_for(len(tokens), cfg)
    chunks = []
    for seq in range(count):
        start = seq * cfg.stride
        window = tokens[start : start + cfg.target_words]
        text = " ".join(window)
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{seq}",
                doc_id=doc.doc_id,
                seq=seq,
                text=text,
                word_count=len(window),
                source_link=doc.source_link,
            )
        )
    return chunks


def _term_tokens(text: str) -> list[str]:
    tokens = []
    for token in text.lower().split():
        token = token.strip(".,;:!?()[]{}\"'`")
        if token and token not in STOP_WORDS:
            tokens.append(token)
    return tokens


def corpus_stats(chunks: list[Chunk], doc_count: int | None = None) -> CorpusStats:
    """Aggregate chunk-length histogram and top-term statistics.

    Terms are lowercased whitespace tokens with surrounding punctuation
    trimmed and the built-in stop-word list applied. Histogram buckets are
    10 words wide; top terms sort by frequency descending, ties broken
    lexicographically.
    """
    if doc_count is None:
        doc_count = len({c.doc_id for c in chunks})
    buckets: Counter[int] = Counter()
    terms: Counter[str] = Counter()
    for chunk in chunks:
        buckets[(chunk.word_count // HISTOGRAM_BUCKET_WORDS) * HISTOGRAM_BUCKET_WORDS] += 1
        terms.update(_term_tokens(chunk.text))
    top = sorted(terms.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_TERMS_COUNT]
    return CorpusStats(
        doc_count=doc_count,
        chunk_count=len(chunks),
        mean_chunks_per_doc=(len(chunks) / doc_count) if doc_count else 0.0,
        chunk_length_histogram=sorted(buckets.items()),
        top_terms=top,
    )


def load_document(path: Path, doc_id: str) -> Document:
    """Read one markup file; a first-line ``<!-- link: ... -->`` directive
    overrides the default source link (the doc_id)."""
    raw = path.read_text(encoding="utf-8")
    source_link = doc_id
    lines = raw.split("\n")
    if lines:
        directive = _LINK_DIRECTIVE_RE.match(lines[0].strip())
        if directive:
            source_link = directive.group(1)
            raw = "\n".join(lines[1:])
    title = ""
    for line in raw.split("\n"):
        heading = _HEADING_RE.match(line.rstrip())
        if heading:
            title = heading.group(1).strip()
            break
    if not title:
        title = path.stem
    return Document(doc_id=doc_id, title=title, body=linearize(raw), source_link=source_link)


def build_corpus(
    input_dir: Path | str,
    cfg: ChunkingConfig,
    warnings: list[str] | None = None,
) -> tuple[list[Document], list[Chunk], CorpusStats]:
    """Ingest every markup file under ``input_dir``.

    Files are processed in sorted relative-path order so the resulting chunk
    store is deterministic. Unreadable files are skipped with a warning; an
    empty result is an error.
    """
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise CorpusError(f"input directory not found: {input_dir}")
    paths = sorted(
        p for p in input_dir.rglob("*")
        if p.is_file() and p.suffix.lower() in MARKUP_EXTENSIONS
    )
    documents: list[Document] = []
    chunks: list[Chunk] = []
    for path in paths:
        doc_id = path.relative_to(input_dir).as_posix()
        try:
            doc = load_document(path, doc_id)
        except (OSError, UnicodeDecodeError) as exc:
            message = f"skipping unreadable file {doc_id}: {exc}"
            logger.warning(message)
            if warnings is not None:
                warnings.append(message)
            continue
        documents.append(doc)
        chunks.extend(chunk_document(doc, cfg))
    if not documents:
        raise CorpusError("empty corpus")
    stats = corpus_stats(chunks, doc_count=len(documents))
    return documents, chunks, stats


def write_chunk_store(chunks: list[Chunk], path: Path | str) -> None:
    """Write chunks as line-delimited JSON with a deterministic field order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for chunk in chunks:
            record = {
                "chunk_id": chunk.chunk_id,
                "doc_id": chunk.doc_id,
                "seq": chunk.seq,
                "text": chunk.text,
                "word_count": chunk.word_count,
                "source_link": chunk.source_link,
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def read_chunk_store(path: Path | str) -> list[Chunk]:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"chunk store not found: {path}")
    chunks = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                chunks.append(Chunk(**record))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CorpusError(f"bad chunk record at {path}:{line_no}: {exc}") from exc
    return chunks


def write_stats(stats: CorpusStats, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "doc_count": stats.doc_count,
        "chunk_count": stats.chunk_count,
        "mean_chunks_per_doc": stats.mean_chunks_per_doc,
        "chunk_length_histogram": [list(b) for b in stats.chunk_length_histogram],
        "top_terms": [list(t) for t in stats.top_terms],
    }
    path.write_text(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
