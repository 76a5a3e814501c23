"""Local acronym glossary: detection, in-line expansion, and persistence.

Detection is deliberately simple: maximal 2-8 character uppercase/digit
tokens with at least two letters, plus an exception list for known
mixed-case acronyms (seeded with CVaR and extended by any glossary entry
whose spelling falls outside the uppercase pattern). Ambiguous entries
surface every candidate expansion instead of guessing.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

ACRONYM_RE = re.compile(r"(?<![A-Za-z0-9])[A-Z0-9]{2,8}(?![A-Za-z0-9])")
MIXED_CASE_SEED = frozenset({"CVaR"})

_EXPANSION_FOLLOWS_RE = re.compile(r" ?\(")


class GlossaryError(Exception):
    """Raised on malformed glossary files or entries."""


@dataclass(frozen=True)
class AcronymEntry:
    acronym: str
    expansions: tuple[str, ...]
    domain_note: str = ""

    def __post_init__(self) -> None:
        if not (2 <= len(self.acronym) <= 8):
            raise GlossaryError(f"acronym length out of range: {self.acronym!r}")
        if not self.expansions:
            raise GlossaryError(f"entry {self.acronym!r} needs at least one expansion")
        deduped = tuple(dict.fromkeys(self.expansions))
        object.__setattr__(self, "expansions", deduped)

    @property
    def ambiguous(self) -> bool:
        return len(self.expansions) > 1


@dataclass(frozen=True)
class Detection:
    token: str
    start: int
    end: int


@dataclass(frozen=True)
class Resolution:
    acronym: str
    expansions: tuple[str, ...]
    ambiguous: bool


class Glossary:
    """Immutable after load; all lookup operations are pure."""

    def __init__(self, entries: Iterable[AcronymEntry] = ()):
        self._entries: dict[str, AcronymEntry] = {}
        for entry in entries:
            self._entries[entry.acronym] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, acronym: str) -> bool:
        return acronym in self._entries

    def get(self, acronym: str) -> AcronymEntry | None:
        return self._entries.get(acronym)

    def entries(self) -> list[AcronymEntry]:
        return sorted(self._entries.values(), key=lambda e: e.acronym)

    @property
    def exception_words(self) -> frozenset[str]:
        """Mixed-case acronyms the uppercase pattern cannot catch."""
        extra = {a for a in self._entries if not ACRONYM_RE.fullmatch(a)}
        return MIXED_CASE_SEED | frozenset(extra)

    def with_entry(self, entry: AcronymEntry) -> "Glossary":
        merged = dict(self._entries)
        existing = merged.get(entry.acronym)
        if existing:
            entry = AcronymEntry(
                entry.acronym,
                existing.expansions + entry.expansions,
                entry.domain_note or existing.domain_note,
            )
        merged[entry.acronym] = entry
        return Glossary(merged.values())

    @classmethod
    def load(cls, path: Path | str) -> "Glossary":
        path = Path(path)
        if not path.is_file():
            raise GlossaryError(f"glossary file not found: {path}")
        entries = []
        with path.open("r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    entries.append(AcronymEntry(
                        acronym=record["acronym"],
                        expansions=tuple(record["expansions"]),
                        domain_note=record.get("domain_note", ""),
                    ))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise GlossaryError(f"bad glossary record at {path}:{line_no}: {exc}") from exc
        return cls(entries)

    def save(self, path: Path | str) -> None:
        """Atomic rewrite: write to a temp file, then replace."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".glossary-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                for entry in self.entries():
                    fh.write(json.dumps({
                        "acronym": entry.acronym,
                        "expansions": list(entry.expansions),
                        "domain_note": entry.domain_note,
                    }, ensure_ascii=False, sort_keys=True) + "\n")
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise


def detect(text: str, extra_exceptions: Iterable[str] = ()) -> list[Detection]:
    """Find acronym-shaped tokens, left to right, spans non-overlapping.

    Tokens immediately followed by a parenthesized expansion are skipped:
    they are already resolved in the text.
    """
    exceptions = set(MIXED_CASE_SEED) | set(extra_exceptions)
    matches: list[Detection] = []
    for match in ACRONYM_RE.finditer(text):
        token = match.group(0)
        if sum(c.isalpha() for c in token) < 2:
            continue
        matches.append(Detection(token, match.start(), match.end()))
    for word in exceptions:
        if ACRONYM_RE.fullmatch(word):
            continue  # already covered by the main pattern
        pattern = re.compile(rf"(?<![A-Za-z0-9]){re.escape(word)}(?![A-Za-z0-9])")
        for match in pattern.finditer(text):
            matches.append(Detection(word, match.start(), match.end()))
    matches.sort(key=lambda d: d.start)
    result: list[Detection] = []
    last_end = -1
    for detection in matches:
        if detection.start < last_end:
            continue
        if _EXPANSION_FOLLOWS_RE.match(text, detection.end):
            continue
        result.append(detection)
        last_end = detection.end
    return result


def expand(text: str, glossary: Glossary) -> tuple[str, list[Resolution]]:
    """Append in-line definitions after the first occurrence of each
    detected glossary acronym.

    Ambiguous entries list every candidate joined by " | " and are flagged
    in the resolutions. Unknown acronyms are left untouched and reported
    with an empty expansion tuple. Acronyms that already carry a
    parenthesized expansion anywhere in the text are not re-expanded, which
    makes the operation idempotent.
    """
    detections = detect(text, glossary.exception_words)

    # Acronyms with any occurrence already followed by "(...)" count as
    # resolved; re-expanding a later occurrence would break idempotence.
    already_expanded: set[str] = set()
    for match in ACRONYM_RE.finditer(text):
        if _EXPANSION_FOLLOWS_RE.match(text, match.end()):
            already_expanded.add(match.group(0))
    for word in glossary.exception_words:
        pattern = re.compile(rf"(?<![A-Za-z0-9]){re.escape(word)}(?![A-Za-z0-9])")
        for match in pattern.finditer(text):
            if _EXPANSION_FOLLOWS_RE.match(text, match.end()):
                already_expanded.add(word)

    pieces: list[str] = []
    cursor = 0
    handled: set[str] = set()
    resolutions: list[Resolution] = []
    for detection in detections:
        if detection.token in handled:
            continue
        handled.add(detection.token)
        entry = glossary.get(detection.token)
        if entry is None:
            resolutions.append(Resolution(detection.token, (), False))
            continue
        if detection.token in already_expanded:
            continue
        insertion = " (" + " | ".join(entry.expansions) + ")"
        pieces.append(text[cursor : detection.end])
        pieces.append(insertion)
        cursor = detection.end
        resolutions.append(Resolution(detection.token, entry.expansions, entry.ambiguous))
    pieces.append(text[cursor:])
    return "".join(pieces), resolutions
