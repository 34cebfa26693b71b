"""Memo ingestion: locate reference sections and split them into fragments."""

from __future__ import annotations

import datetime
import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path


class CorpusError(Exception):
    """Malformed corpus input or segmenter configuration."""


DEFAULT_HEADINGS = ("References", "Bibliography", "Sources")
DEFAULT_TERMINATORS = ("Appendix",)
DEFAULT_MIN_FRAGMENT_CHARS = 25

# Leading enumeration markers: "1.", "[1]", or a bullet.
_MARKER_RE = re.compile(r"^\s*(?:\[\d{1,4}\]|\d{1,4}\.|•)\s*")
_NON_ALNUM_RE = re.compile(r"[^a-z0-9]+")


@dataclass(frozen=True)
class Memo:
    memo_id: str
    title: str = ""
    decision_date: datetime.date | None = None
    body_text: str = ""


@dataclass(frozen=True)
class ReferenceFragment:
    memo_id: str
    ordinal: int
    raw_text: str
    normalized_text: str


@dataclass(frozen=True)
class SegmenterConfig:
    headings: tuple[str, ...] = DEFAULT_HEADINGS
    terminators: tuple[str, ...] = DEFAULT_TERMINATORS
    min_fragment_chars: int = DEFAULT_MIN_FRAGMENT_CHARS

    def __post_init__(self) -> None:
        if not self.headings:
            raise CorpusError("segmenter heading list must not be empty")


def normalize_fragment(raw_text: str) -> str:
    """Normalize free text for matching.

    Case-folds, strips diacritics down to base letters, and collapses every
    run of non-alphanumeric characters to a single space. Idempotent.
    """
    decomposed = unicodedata.normalize("NFKD", raw_text)
    stripped = "".join(c for c in decomposed if not unicodedata.combining(c))
    return _NON_ALNUM_RE.sub(" ", stripped.casefold()).strip()


def segment_reference_section(memo: Memo, config: SegmenterConfig | None = None) -> str | None:
    """Return the memo's reference-section text, or None if no heading is found.

    A heading matches a whole line (case-insensitive, after trimming). The
    last matching heading wins; the section runs to the end of the document
    or to the next terminator heading.
    """
    config = config or SegmenterConfig()
    if not memo.body_text:
        raise CorpusError(f"memo {memo.memo_id!r} has empty body_text")

    headings = {h.strip().casefold() for h in config.headings}
    terminators = {t.strip().casefold() for t in config.terminators}

    lines = memo.body_text.splitlines(keepends=True)
    start = None  # index of the line *after* the last matching heading
    for i, line in enumerate(lines):
        if line.strip().casefold() in headings:
            start = i + 1
    if start is None:
        return None

    end = len(lines)
    for i in range(start, len(lines)):
        if lines[i].strip().casefold() in terminators:
            end = i
            break
    return "".join(lines[start:end])


def split_fragments(
    memo_id: str,
    reference_text: str,
    min_chars: int = DEFAULT_MIN_FRAGMENT_CHARS,
) -> list[ReferenceFragment]:
    """Split a reference section into citation fragments.

    A new fragment starts at each enumeration marker; blank lines close the
    current fragment; any other line continues the previous one (hard-wrap
    merge). Fragments shorter than ``min_chars`` or that normalize to
    nothing are dropped as heading debris, and ordinals are reassigned
    densely afterwards.
    """
    if not reference_text:
        raise CorpusError("reference_text must be non-empty")

    pieces: list[str] = []
    current: list[str] | None = None
    for line in reference_text.splitlines():
        stripped = line.strip()
        if not stripped:
            if current:
                pieces.append(" ".join(current))
            current = None
            continue
        marker = _MARKER_RE.match(line)
        if marker:
            if current:
                pieces.append(" ".join(current))
            current = []
            stripped = line[marker.end():].strip()
            if stripped:
                current.append(stripped)
        elif current is None:
            current = [stripped]
        else:
            current.append(stripped)
    if current:
        pieces.append(" ".join(current))

    fragments = []
    for raw in pieces:
        raw = raw.strip()
        if len(raw) < min_chars:
            continue
        normalized = normalize_fragment(raw)
        if not normalized:
            continue
        fragments.append(
            ReferenceFragment(
                memo_id=memo_id,
                ordinal=len(fragments),
                raw_text=raw,
                normalized_text=normalized,
            )
        )
    return fragments


def extract_fragments(memo: Memo, config: SegmenterConfig | None = None) -> list[ReferenceFragment]:
    """Segment a memo and split the result; empty list when no section found."""
    config = config or SegmenterConfig()
    section = segment_reference_section(memo, config)
    if section is None or not section.strip():
        return []
    return split_fragments(memo.memo_id, section, config.min_fragment_chars)


def _parse_date(value: object) -> datetime.date | None:
    if value in (None, ""):
        return None
    if isinstance(value, str):
        try:
            return datetime.date.fromisoformat(value)
        except ValueError as exc:
            raise CorpusError(f"bad decision_date {value!r}: {exc}") from exc
    raise CorpusError(f"bad decision_date {value!r}")


def load_corpus(path: str | Path) -> list[Memo]:
    """Load memos from a JSONL file or a directory of UTF-8 text files.

    JSONL rows carry {memo_id, title, decision_date, body_text}. In
    directory mode the file stem is the memo id and the first non-empty
    line is taken as the title.
    """
    path = Path(path)
    memos: list[Memo] = []
    seen: set[str] = set()

    if path.is_dir():
        for file in sorted(path.glob("*.txt")):
            body = file.read_text(encoding="utf-8")
            title = next((ln.strip() for ln in body.splitlines() if ln.strip()), "")
            memos.append(Memo(memo_id=file.stem, title=title, body_text=body))
    elif path.is_file():
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                memo_id = row.get("memo_id")
                if not memo_id or not isinstance(memo_id, str):
                    raise CorpusError(f"{path}:{lineno}: missing memo_id")
                memos.append(
                    Memo(
                        memo_id=memo_id,
                        title=str(row.get("title") or ""),
                        decision_date=_parse_date(row.get("decision_date")),
                        body_text=str(row.get("body_text") or ""),
                    )
                )
    else:
        raise CorpusError(f"corpus path does not exist: {path}")

    for memo in memos:
        if memo.memo_id in seen:
            raise CorpusError(f"duplicate memo_id {memo.memo_id!r} in corpus")
        seen.add(memo.memo_id)
    return memos


def fragment_to_row(fragment: ReferenceFragment) -> dict:
    return {
        "memo_id": fragment.memo_id,
        "ordinal": fragment.ordinal,
        "raw_text": fragment.raw_text,
        "normalized_text": fragment.normalized_text,
    }


def fragment_from_row(row: dict) -> ReferenceFragment:
    return ReferenceFragment(
        memo_id=row["memo_id"],
        ordinal=int(row["ordinal"]),
        raw_text=row["raw_text"],
        normalized_text=row["normalized_text"],
    )
