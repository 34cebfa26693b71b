"""Local bibliographic index: record ingestion and token search."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .corpus import normalize_fragment


class IngestError(Exception):
    """Records file violates the article schema."""


MIN_YEAR = 1800
MAX_YEAR = 2100


@dataclass(frozen=True)
class GrantTag:
    award_text: str
    funder_text: str


@dataclass(frozen=True)
class ArticleRecord:
    article_id: str
    title: str
    authors: tuple[str, ...]
    journal: str
    pub_year: int | None
    volume: str | None = None
    pages: str | None = None
    grant_tags: tuple[GrantTag, ...] = ()
    retracted: bool = False

    def title_tokens(self) -> frozenset[str]:
        return frozenset(t for t in normalize_fragment(self.title).split() if len(t) >= 2)

    def journal_tokens(self) -> frozenset[str]:
        return frozenset(t for t in normalize_fragment(self.journal).split() if len(t) >= 2)

    def author_tokens(self) -> frozenset[str]:
        tokens: set[str] = set()
        for author in self.authors:
            tokens.update(normalize_fragment(author).split())
        return frozenset(tokens)

    def surnames(self) -> frozenset[str]:
        # Surname is the first token of each "Surname AB" author string.
        names = set()
        for author in self.authors:
            parts = normalize_fragment(author).split()
            if parts:
                names.add(parts[0])
        return frozenset(names)


@dataclass(frozen=True)
class IndexStats:
    record_count: int
    token_count: int
    build_timestamp: float = field(default_factory=time.time, compare=False)


def _parse_record(row: dict, where: str) -> ArticleRecord:
    for key in ("article_id", "title", "authors", "journal"):
        if key not in row:
            raise IngestError(f"{where}: missing field {key!r}")
    article_id = row["article_id"]
    if not isinstance(article_id, str) or not article_id:
        raise IngestError(f"{where}: article_id must be a non-empty string")
    authors = row["authors"]
    if not isinstance(authors, list) or not all(isinstance(a, str) for a in authors):
        raise IngestError(f"{where}: authors must be a list of strings")
    pub_year = row.get("pub_year")
    if pub_year is not None:
        if not isinstance(pub_year, int) or not (MIN_YEAR <= pub_year <= MAX_YEAR):
            raise IngestError(f"{where}: pub_year {pub_year!r} outside [{MIN_YEAR}, {MAX_YEAR}]")
    tags = []
    for tag in row.get("grant_tags") or []:
        if not isinstance(tag, dict) or "award_text" not in tag or "funder_text" not in tag:
            raise IngestError(f"{where}: grant_tags entries need award_text and funder_text")
        tags.append(GrantTag(award_text=str(tag["award_text"]), funder_text=str(tag["funder_text"])))
    return ArticleRecord(
        article_id=article_id,
        title=str(row["title"]),
        authors=tuple(authors),
        journal=str(row["journal"]),
        pub_year=pub_year,
        volume=row.get("volume"),
        pages=row.get("pages"),
        grant_tags=tuple(tags),
        retracted=bool(row.get("retracted", False)),
    )


def record_to_row(record: ArticleRecord) -> dict:
    row: dict = {
        "article_id": record.article_id,
        "title": record.title,
        "authors": list(record.authors),
        "journal": record.journal,
        "pub_year": record.pub_year,
        "grant_tags": [
            {"award_text": t.award_text, "funder_text": t.funder_text} for t in record.grant_tags
        ],
        "retracted": record.retracted,
    }
    if record.volume is not None:
        row["volume"] = record.volume
    if record.pages is not None:
        row["pages"] = record.pages
    return row


class BiblioIndex:
    """Inverted token index over title/author/journal plus an exact year index.

    Immutable after ingest; title and journal contribute normalized tokens of
    length >= 2 while author tokens (including bare initials) are indexed
    in full.
    """

    def __init__(self) -> None:
        self._records: dict[str, ArticleRecord] = {}
        self._postings: dict[str, set[str]] = {}
        self._by_year: dict[int, set[str]] = {}
        self._frozen = False

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, article_id: str) -> bool:
        return article_id in self._records

    def get(self, article_id: str) -> ArticleRecord | None:
        return self._records.get(article_id)

    def records(self) -> Iterable[ArticleRecord]:
        for article_id in sorted(self._records):
            yield self._records[article_id]

    def add(self, record: ArticleRecord) -> None:
        if self._frozen:
            raise IngestError("index is frozen; ingest before querying")
        if record.article_id in self._records:
            raise IngestError(f"duplicate article_id {record.article_id!r}")
        self._records[record.article_id] = record
        tokens = record.title_tokens() | record.journal_tokens() | record.author_tokens()
        for token in tokens:
            self._postings.setdefault(token, set()).add(record.article_id)
        if record.pub_year is not None:
            self._by_year.setdefault(record.pub_year, set()).add(record.article_id)

    def freeze(self) -> IndexStats:
        self._frozen = True
        return IndexStats(record_count=len(self._records), token_count=len(self._postings))

    def search(
        self,
        tokens: Iterable[str],
        year_hint: int | None = None,
        k: int = 10,
    ) -> list[ArticleRecord]:
        """Top-k records by shared-token count.

        Ties break on |pub_year - year_hint| (when a hint is given; records
        without a year sort last), then on ascending article_id, so the
        ranking is a total order.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        shared: dict[str, int] = {}
        for token in set(tokens):
            for article_id in self._postings.get(token, ()):
                shared[article_id] = shared.get(article_id, 0) + 1
        if not shared:
            return []

        far = MAX_YEAR - MIN_YEAR + 1

        def sort_key(article_id: str) -> tuple:
            record = self._records[article_id]
            if year_hint is not None:
                distance = abs(record.pub_year - year_hint) if record.pub_year is not None else far
            else:
                distance = 0
            return (-shared[article_id], distance, article_id)

        ranked = sorted(shared, key=sort_key)
        return [self._records[a] for a in ranked[:k]]


def ingest_records(records_source: str | Path | Iterable[dict]) -> tuple[BiblioIndex, IndexStats]:
    """Build an index from a records JSONL file (or pre-parsed rows).

    Schema violations and duplicate ids raise IngestError naming the line.
    """
    index = BiblioIndex()
    if isinstance(records_source, (str, Path)):
        path = Path(records_source)
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                where = f"{path}:{lineno}"
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"{where}: invalid JSON: {exc}") from exc
                record = _parse_record(row, where)
                if record.article_id in index:
                    raise IngestError(f"{where}: duplicate article_id {record.article_id!r}")
                index.add(record)
    else:
        for i, row in enumerate(records_source, start=1):
            record = _parse_record(row, f"row {i}")
            if record.article_id in index:
                raise IngestError(f"row {i}: duplicate article_id {record.article_id!r}")
            index.add(record)
    stats = index.freeze()
    return index, stats
