from __future__ import annotations

import json
import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragkit.corpus import (
    Chunk,
    ChunkingConfig,
    CorpusError,
    Document,
    build_corpus,
    chunk_count_for,
    chunk_document,
    corpus_stats,
    linearize,
    read_chunk_store,
    write_chunk_store,
)


def make_doc(word_count: int, doc_id: str = "doc.md") -> Document:
    body = " ".join(f"w{i}" for i in range(word_count))
    return Document(doc_id=doc_id, title="t", body=body, source_link=doc_id)


def sliding_window_oracle(tokens: list[str], target: int, overlap: int) -> list[list[str]]:
    """Independent chunking oracle: emit windows until coverage, no formula."""
    stride = target - overlap
    windows = []
    start = 0
    while True:
        windows.append(tokens[start : start + target])
        start += stride
        if start >= len(tokens) - overlap:
            break
    return windows


class TestLinearize:
    def test_pipe_table_row_becomes_keyed_line(self):
        assert linearize("| a | b |\n|---|---|\n| 1 | 2 |") == "a: 1; b: 2"

    def test_fenced_code_gets_prefix(self):
        assert linearize("```\nx=1\n```") == "code: x=1"

    def test_heading_marker_removed(self):
        assert linearize("# Title\ntext") == "Title\ntext"

    def test_multi_row_table(self):
        text = "| name | port |\n|---|---|\n| api | 443 |\n| db | 5432 |"
        assert linearize(text) == "name: api; port: 443\nname: db; port: 5432"

    def test_malformed_row_padded_with_warning(self):
        warnings: list[str] = []
        out = linearize("| a | b |\n| 1 |", warnings)
        assert out == "a: 1; b:"
        assert len(warnings) == 1

    def test_overlong_row_truncated_with_warning(self):
        warnings: list[str] = []
        out = linearize("| a | b |\n| 1 | 2 | 3 |", warnings)
        assert out == "a: 1; b: 2"
        assert len(warnings) == 1

    def test_list_markers_stripped(self):
        assert linearize("- one\n* two\n3. three") == "one\ntwo\nthree"

    def test_paragraph_structure_preserved(self):
        assert linearize("para one\n\npara two") == "para one\n\npara two"

    def test_code_block_multiline(self):
        out = linearize("```python\na = 1\nb = 2\n```")
        assert out == "code: a = 1\ncode: b = 2"

    def test_no_markup_tokens_left(self, toy_corpus_dir: Path):
        for path in toy_corpus_dir.iterdir():
            body = linearize(path.read_text(encoding="utf-8"))
            for line in body.splitlines():
                assert not line.startswith("|"), line
                assert not line.startswith("```"), line
                assert not line.startswith("#"), line

    @given(st.text(max_size=600))
    @settings(max_examples=200, deadline=None)
    def test_idempotent(self, text: str):
        once = linearize(text)
        assert linearize(once) == once

    def test_idempotent_on_real_docs(self, toy_corpus_dir: Path):
        for path in toy_corpus_dir.iterdir():
            once = linearize(path.read_text(encoding="utf-8"))
            assert linearize(once) == once


class TestChunkingConfig:
    def test_overlap_must_be_smaller(self):
        with pytest.raises(ValueError):
            ChunkingConfig(target_words=50, overlap_words=50)

    def test_negative_overlap_rejected(self):
        with pytest.raises(ValueError):
            ChunkingConfig(target_words=50, overlap_words=-1)


class TestChunkDocument:
    def test_500_words_target_120_overlap_20_gives_5_chunks(self):
        # Oracle: the sliding-window loop below, plus token-slice reconstruction.
        doc = make_doc(500)
        cfg = ChunkingConfig(target_words=120, overlap_words=20)
        chunks = chunk_document(doc, cfg)
        oracle = sliding_window_oracle(doc.body.split(), 120, 20)
        assert len(oracle) == 5
        assert [c.text.split() for c in chunks] == oracle
        assert [c.seq for c in chunks] == [0, 1, 2, 3, 4]

    def test_short_document_single_chunk(self):
        doc = make_doc(80)
        chunks = chunk_document(doc, ChunkingConfig(target_words=120, overlap_words=20))
        assert len(chunks) == 1
        assert chunks[0].word_count == 80

    def test_exact_fit_single_chunk(self):
        doc = make_doc(120)
        chunks = chunk_document(doc, ChunkingConfig(target_words=120, overlap_words=20))
        assert len(chunks) == 1

    def test_empty_body_yields_empty_list(self):
        doc = Document(doc_id="d", title="t", body="", source_link="d")
        assert chunk_document(doc, ChunkingConfig()) == []

    def test_chunk_ids_and_links(self):
        doc = Document(doc_id="a/b.md", title="t",
                       body=" ".join(str(i) for i in range(150)),
                       source_link="https://x/y")
        chunks = chunk_document(doc, ChunkingConfig(target_words=100, overlap_words=20))
        assert chunks[0].chunk_id == "a/b.md#0"
        assert all(c.source_link == "https://x/y" for c in chunks)

    def test_word_count_matches_text(self):
        doc = make_doc(333)
        for chunk in chunk_document(doc, ChunkingConfig()):
            assert chunk.word_count == len(chunk.text.split())

    def test_consecutive_chunks_share_exactly_overlap_tokens(self):
        doc = make_doc(777)
        cfg = ChunkingConfig(target_words=90, overlap_words=30)
        chunks = chunk_document(doc, cfg)
        for left, right in zip(chunks, chunks[1:]):
            assert left.text.split()[-cfg.overlap_words:] == \
                right.text.split()[: cfg.overlap_words]

    @given(
        word_count=st.integers(min_value=1, max_value=3000),
        target=st.integers(min_value=20, max_value=500),
        data=st.data(),
    )
    @settings(max_examples=300, deadline=None)
    def test_count_formula_and_reconstruction(self, word_count, target, data):
        overlap = data.draw(st.integers(min_value=0, max_value=target - 1))
        cfg = ChunkingConfig(target_words=target, overlap_words=overlap)
        doc = make_doc(word_count)
        chunks = chunk_document(doc, cfg)
        assert len(chunks) == chunk_count_for(word_count, cfg)
        assert len(chunks) == max(
            1, math.ceil(max(0, word_count - overlap) / (target - overlap))
        )
        rebuilt: list[str] = []
        for i, chunk in enumerate(chunks):
            tokens = chunk.text.split()
            rebuilt.extend(tokens if i == 0 else tokens[overlap:])
        assert rebuilt == doc.body.split()


class TestCorpusStats:
    def test_simple_term_count(self):
        chunks = [Chunk("c#0", "c", 0, "a b a", 3, "c")]
        stats = corpus_stats(chunks)
        assert stats.top_terms[0] == ("a", 2)

    def test_histogram_buckets(self):
        chunks = [
            Chunk("c#0", "c", 0, " ".join("x" * 1 for _ in range(55)), 55, "c"),
            Chunk("d#0", "d", 0, " ".join("y" * 1 for _ in range(119)), 119, "d"),
        ]
        stats = corpus_stats(chunks)
        assert dict(stats.chunk_length_histogram) == {50: 1, 110: 1}

    def test_histogram_sums_to_chunk_count(self):
        rng = random.Random(7)
        chunks = [
            Chunk(f"c{i}#0", f"c{i}", 0, " ".join("w" for _ in range(rng.randint(1, 200))),
                  0, f"c{i}")
            for i in range(50)
        ]
        chunks = [Chunk(c.chunk_id, c.doc_id, 0, c.text, len(c.text.split()), c.source_link)
                  for c in chunks]
        stats = corpus_stats(chunks)
        assert sum(count for _, count in stats.chunk_length_histogram) == stats.chunk_count

    def test_mean_chunks_per_doc_at_scale(self):
        # 30000 chunks over 1624 docs -> ~18.47, reported as "approximately 19".
        chunks = [Chunk(f"d{i % 1624}#{i // 1624}", f"d{i % 1624}", i // 1624, "w", 1,
                        f"d{i % 1624}") for i in range(30000)]
        stats = corpus_stats(chunks, doc_count=1624)
        assert stats.mean_chunks_per_doc == pytest.approx(18.47, abs=0.005)
        assert round(stats.mean_chunks_per_doc) == 18  # prose rounds up to ~19
        assert stats.chunk_count == 30000

    def test_stop_words_excluded(self):
        chunks = [Chunk("c#0", "c", 0, "the the the ledger ledger", 5, "c")]
        stats = corpus_stats(chunks)
        assert stats.top_terms[0][0] == "ledger"
        assert all(term != "the" for term, _ in stats.top_terms)

    def test_tie_break_lexicographic(self):
        chunks = [Chunk("c#0", "c", 0, "zeta alpha zeta alpha", 4, "c")]
        stats = corpus_stats(chunks)
        assert stats.top_terms[:2] == [("alpha", 2), ("zeta", 2)]

    def test_top_terms_capped_at_20(self):
        text = " ".join(f"term{i}" for i in range(40))
        chunks = [Chunk("c#0", "c", 0, text, 40, "c")]
        assert len(corpus_stats(chunks).top_terms) == 20


class TestBuildCorpus:
    def test_three_files_counts(self, tmp_path: Path):
        # Oracle: per-file chunk_document counts.
        for i in range(3):
            (tmp_path / f"f{i}.md").write_text(
                " ".join(f"w{j}" for j in range(500)), encoding="utf-8")
        cfg = ChunkingConfig(target_words=120, overlap_words=20)
        docs, chunks, stats = build_corpus(tmp_path, cfg)
        per_file = [len(chunk_document(d, cfg)) for d in docs]
        assert stats.doc_count == 3
        assert stats.chunk_count == sum(per_file) == 15
        assert stats.mean_chunks_per_doc == 5.0

    def test_uniform_100_word_docs_land_in_50_120_band(self, tmp_path: Path):
        for i in range(10):
            (tmp_path / f"f{i}.md").write_text(
                " ".join(f"w{j}" for j in range(100)), encoding="utf-8")
        _, _, stats = build_corpus(tmp_path, ChunkingConfig(100, 20))
        for bucket, count in stats.chunk_length_histogram:
            assert 50 <= bucket <= 120

    def test_empty_directory_is_error(self, tmp_path: Path):
        with pytest.raises(CorpusError, match="empty corpus"):
            build_corpus(tmp_path, ChunkingConfig())

    def test_missing_directory_is_error(self, tmp_path: Path):
        with pytest.raises(CorpusError):
            build_corpus(tmp_path / "nope", ChunkingConfig())

    def test_unreadable_file_skipped_with_warning(self, tmp_path: Path):
        (tmp_path / "good.md").write_text("hello world", encoding="utf-8")
        (tmp_path / "bad.md").write_bytes(b"\xff\xfe\xff garbage \xff")
        warnings: list[str] = []
        docs, _, _ = build_corpus(tmp_path, ChunkingConfig(), warnings)
        assert [d.doc_id for d in docs] == ["good.md"]
        assert any("bad.md" in w for w in warnings)

    def test_link_directive_overrides_source_link(self, tmp_path: Path):
        (tmp_path / "a.md").write_text(
            "<!-- link: https://kb/x -->\n# A\nbody text", encoding="utf-8")
        (tmp_path / "b.md").write_text("# B\nbody text", encoding="utf-8")
        docs, chunks, _ = build_corpus(tmp_path, ChunkingConfig())
        by_id = {d.doc_id: d for d in docs}
        assert by_id["a.md"].source_link == "https://kb/x"
        assert by_id["b.md"].source_link == "b.md"
        assert {c.source_link for c in chunks} == {"https://kb/x", "b.md"}

    def test_deterministic_chunk_store(self, tmp_path: Path, toy_corpus_dir: Path):
        cfg = ChunkingConfig()
        _, chunks1, _ = build_corpus(toy_corpus_dir, cfg)
        _, chunks2, _ = build_corpus(toy_corpus_dir, cfg)
        p1, p2 = tmp_path / "s1.jsonl", tmp_path / "s2.jsonl"
        write_chunk_store(chunks1, p1)
        write_chunk_store(chunks2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_chunk_store_round_trip(self, tmp_path: Path, toy_corpus_dir: Path):
        _, chunks, _ = build_corpus(toy_corpus_dir, ChunkingConfig())
        path = tmp_path / "chunks.jsonl"
        write_chunk_store(chunks, path)
        assert read_chunk_store(path) == chunks

    def test_seq_values_contiguous(self, toy_corpus_dir: Path):
        _, chunks, _ = build_corpus(toy_corpus_dir, ChunkingConfig())
        by_doc: dict[str, list[int]] = {}
        for chunk in chunks:
            by_doc.setdefault(chunk.doc_id, []).append(chunk.seq)
        for seqs in by_doc.values():
            assert sorted(seqs) == list(range(len(seqs)))
