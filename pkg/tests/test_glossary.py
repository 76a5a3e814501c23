from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragkit.glossary import (
    AcronymEntry,
    Glossary,
    GlossaryError,
    detect,
    expand,
)


class TestDetect:
    def test_uppercase_and_mixed_case_exception(self):
        found = [d.token for d in detect("How is CVaR calculated in the IRRBB framework?")]
        assert found == ["CVaR", "IRRBB"]

    def test_already_expanded_excluded(self):
        assert detect("MDES (Mastercard Digital Enablement Service)") == []

    def test_unknown_acronym_still_detected(self):
        assert [d.token for d in detect("the API")] == ["API"]

    def test_digits_allowed_with_two_letters(self):
        assert [d.token for d in detect("M4M rollout")] == ["M4M"]

    def test_pure_digits_rejected(self):
        assert detect("in 2024 we shipped 100 features") == []

    def test_length_bounds(self):
        assert detect("AB") and not detect("A")
        assert detect("ABCDEFGH") and not detect("ABCDEFGHI")

    def test_embedded_in_word_not_detected(self):
        assert detect("ApplePIE") == []
        assert detect("xAPIx") == []

    def test_spans_sorted_disjoint(self):
        text = "CMA talks to MDES via the API and IRRBB caps it"
        detections = detect(text)
        spans = [(d.start, d.end) for d in detections]
        assert spans == sorted(spans)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert e1 <= s2
        for d in detections:
            assert text[d.start:d.end] == d.token

    def test_glossary_extends_exception_list(self, toy_glossary: Glossary):
        assert "EaR" in toy_glossary.exception_words
        found = [d.token for d in detect("EaR is reported weekly",
                                         toy_glossary.exception_words)]
        assert found == ["EaR"]


class TestExpand:
    def test_cma_ambiguity_surfaces_both_candidates(self, cma_glossary: Glossary):
        out, resolutions = expand("CMA rules", cma_glossary)
        assert out == ("CMA (Consumer Management Application | "
                       "Cardholder Management Architecture) rules")
        assert len(resolutions) == 1
        assert resolutions[0].ambiguous is True
        assert resolutions[0].expansions == (
            "Consumer Management Application", "Cardholder Management Architecture")

    def test_idempotent(self, cma_glossary: Glossary):
        text = "CMA rules and CVaR limits for the IRRBB desk, plus CMA again"
        once, _ = expand(text, cma_glossary)
        twice, _ = expand(once, cma_glossary)
        assert once == twice

    def test_no_acronyms_unchanged(self, cma_glossary: Glossary):
        out, resolutions = expand("plain text only here", cma_glossary)
        assert out == "plain text only here"
        assert resolutions == []

    def test_unknown_acronym_listed_with_empty_expansion(self, cma_glossary: Glossary):
        out, resolutions = expand("the API gateway", cma_glossary)
        assert out == "the API gateway"
        assert [(r.acronym, r.expansions) for r in resolutions] == [("API", ())]

    def test_first_occurrence_only(self, cma_glossary: Glossary):
        out, _ = expand("MDES here, MDES there", cma_glossary)
        assert out == ("MDES (Mastercard Digital Enablement Service) here, "
                       "MDES there")

    def test_original_text_is_subsequence(self, cma_glossary: Glossary):
        text = "CMA and MDES and IRRBB and CVaR all in one line"
        out, _ = expand(text, cma_glossary)
        it = iter(out)
        assert all(ch in it for ch in text)

    def test_mixed_case_exception_expanded(self, cma_glossary: Glossary):
        out, resolutions = expand("CVaR models", cma_glossary)
        assert out == "CVaR (Conditional Value at Risk) models"
        assert resolutions[0].ambiguous is False

    def test_partially_expanded_text_not_touched(self, cma_glossary: Glossary):
        text = "CMA (Consumer Management Application | Cardholder Management Architecture) and CMA"
        out, _ = expand(text, cma_glossary)
        assert out == text

    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_idempotence_random_seeded_texts(self, data):
        glossary = Glossary([
            AcronymEntry("CMA", ("Consumer Management Application",
                                 "Cardholder Management Architecture")),
            AcronymEntry("MDES", ("Mastercard Digital Enablement Service",)),
            AcronymEntry("CVaR", ("Conditional Value at Risk",)),
        ])
        words = data.draw(st.lists(
            st.sampled_from(["alpha", "beta", "CMA", "MDES", "CVaR", "API",
                             "the", "risk,", "(note)", "x1"]),
            min_size=0, max_size=30))
        text = " ".join(words)
        once, _ = expand(text, glossary)
        twice, _ = expand(once, glossary)
        assert once == twice


class TestGlossaryFile:
    def test_load_save_round_trip(self, tmp_path: Path, toy_glossary: Glossary):
        path = tmp_path / "glossary.jsonl"
        toy_glossary.save(path)
        reloaded = Glossary.load(path)
        assert reloaded.entries() == toy_glossary.entries()

    def test_atomic_rewrite_keeps_single_file(self, tmp_path: Path):
        path = tmp_path / "glossary.jsonl"
        glossary = Glossary([AcronymEntry("API", ("Application Programming Interface",))])
        glossary.save(path)
        glossary.with_entry(AcronymEntry("KYC", ("Know Your Customer",))).save(path)
        assert len(list(tmp_path.iterdir())) == 1
        assert len(Glossary.load(path)) == 2

    def test_with_entry_merges_expansions(self):
        glossary = Glossary([AcronymEntry("CMA", ("Consumer Management Application",))])
        merged = glossary.with_entry(
            AcronymEntry("CMA", ("Cardholder Management Architecture",)))
        entry = merged.get("CMA")
        assert entry.expansions == ("Consumer Management Application",
                                    "Cardholder Management Architecture")
        assert entry.ambiguous

    def test_expansions_deduplicated(self):
        entry = AcronymEntry("API", ("X", "X", "Y"))
        assert entry.expansions == ("X", "Y")

    def test_entry_validation(self):
        with pytest.raises(GlossaryError):
            AcronymEntry("A", ("too short",))
        with pytest.raises(GlossaryError):
            AcronymEntry("ABC", ())

    def test_missing_file(self, tmp_path: Path):
        with pytest.raises(GlossaryError, match="not found"):
            Glossary.load(tmp_path / "absent.jsonl")

    def test_bad_record(self, tmp_path: Path):
        path = tmp_path / "glossary.jsonl"
        path.write_text('{"acronym": "AB"}\n', encoding="utf-8")
        with pytest.raises(GlossaryError, match="bad glossary record"):
            Glossary.load(path)
