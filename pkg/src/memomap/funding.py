"""Article-award linkage: two-direction lookup, funder aliases, year imputation."""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable

from .biblio import ArticleRecord

logger = logging.getLogger(__name__)

UNMAPPED = "UNMAPPED"
SOURCE_ARTICLE = "article_metadata"
SOURCE_AWARD_DB = "award_database"

# Retired funder codes folded into their successor.
_FUNDER_MERGES = {"NCRR": "NCATS"}
_RAW_MERGES = {"ncrr": "NCATS", "national center for research resources": "NCATS"}

_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)
_WS_RE = re.compile(r"\s+")


class FundingError(Exception):
    """Malformed award database, alias table, or award identifier."""


class UnmappedFunderError(FundingError):
    """A funder string missed the alias table while policy is 'fail'."""


@dataclass(frozen=True)
class Award:
    full_project_number: str
    core_project_number: str
    funder_code: str
    fiscal_year: int
    org_id: str | None = None
    org_name: str | None = None
    cited_article_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class ArticleAwardLink:
    article_id: str
    core_project_number: str
    funder_code: str
    source: str
    imputed_full_project: str | None = None
    imputed_year: int | None = None
    org_id: str | None = None
    org_name: str | None = None


class FunderAliasTable:
    """Maps raw funder strings to canonical codes.

    Lookup keys are normalized (case-folded, punctuation stripped); retired
    codes are folded into their successors. ``on_unmapped`` is "warn" or
    "fail".
    """

    def __init__(self, mapping: dict[str, str], on_unmapped: str = "warn") -> None:
        if on_unmapped not in ("warn", "fail"):
            raise FundingError(f"bad on_unmapped policy {on_unmapped!r}")
        self._mapping = {_normalize_name(raw): code.strip() for raw, code in mapping.items()}
        self.on_unmapped = on_unmapped

    @property
    def vocabulary(self) -> frozenset[str]:
        codes = set(self._mapping.values()) | set(_FUNDER_MERGES.values())
        return frozenset(codes - set(_FUNDER_MERGES))

    def lookup(self, raw: str) -> str:
        key = _normalize_name(raw)
        code = self._mapping.get(key)
        if code is None:
            code = _RAW_MERGES.get(key, UNMAPPED)
        return _FUNDER_MERGES.get(code, code)


def _normalize_name(raw: str) -> str:
    return _WS_RE.sub(" ", _PUNCT_RE.sub(" ", raw.casefold())).strip()


def normalize_funder(raw: str, aliases: FunderAliasTable) -> str:
    """Canonical funder code for a raw funder string, UNMAPPED as fallback."""
    return aliases.lookup(raw)


def load_aliases(path: str | Path, on_unmapped: str = "warn") -> FunderAliasTable:
    """Read a two-column raw_name,canonical_code CSV."""
    mapping: dict[str, str] = {}
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and [c.strip().lower() for c in row[:2]] == ["raw_name", "canonical_code"]:
                continue
            if len(row) < 2 or not row[0].strip() or not row[1].strip():
                raise FundingError(f"{path}:{lineno}: alias rows need raw_name,canonical_code")
            mapping[row[0].strip()] = row[1].strip()
    return FunderAliasTable(mapping, on_unmapped=on_unmapped)


def load_default_aliases(on_unmapped: str = "warn") -> FunderAliasTable:
    """Alias table bundled with the package (editable seed list)."""
    ref = resources.files("memomap.data").joinpath("funder_aliases.csv")
    with resources.as_file(ref) as path:
        return load_aliases(path, on_unmapped=on_unmapped)


def parse_core_project(award_text: str) -> str:
    """Reduce an award identifier to its core project number.

    Strips the year/amendment suffix after the first hyphen and removes
    whitespace, e.g. "R01 CA031770-02" -> "R01CA031770".
    """
    head = award_text.split("-", 1)[0]
    return _WS_RE.sub("", head).upper()


class AwardDatabase:
    """Award records indexed by core project number and by cited article."""

    def __init__(self, awards: Iterable[Award]) -> None:
        self._by_full: dict[str, Award] = {}
        self._by_core: dict[str, list[Award]] = {}
        self._by_article: dict[str, list[Award]] = {}
        for award in awards:
            if award.full_project_number in self._by_full:
                raise FundingError(f"duplicate full_project_number {award.full_project_number!r}")
            self._by_full[award.full_project_number] = award
        for full in sorted(self._by_full):
            award = self._by_full[full]
            self._by_core.setdefault(award.core_project_number, []).append(award)
            for article_id in award.cited_article_ids:
                self._by_article.setdefault(article_id, []).append(award)

    def __len__(self) -> int:
        return len(self._by_full)

    def all_awards(self) -> list[Award]:
        return [self._by_full[f] for f in sorted(self._by_full)]

    def get(self, full_project_number: str) -> Award | None:
        return self._by_full.get(full_project_number)

    def records_for_core(self, core: str) -> list[Award]:
        return list(self._by_core.get(core, ()))

    def awards_citing(self, article_id: str) -> list[Award]:
        return list(self._by_article.get(article_id, ()))


def _parse_award(row: dict, where: str) -> Award:
    for key in ("full_project_number", "core_project_number", "funder_code", "fiscal_year"):
        if key not in row:
            raise FundingError(f"{where}: missing field {key!r}")
    full = str(row["full_project_number"])
    core = str(row["core_project_number"])
    if not (full == core or full.startswith(core + "-")):
        raise FundingError(f"{where}: full number {full!r} does not extend core {core!r}")
    fiscal_year = row["fiscal_year"]
    if not isinstance(fiscal_year, int):
        raise FundingError(f"{where}: fiscal_year must be an integer")
    cited = row.get("cited_article_ids") or []
    if not isinstance(cited, list) or not all(isinstance(a, str) for a in cited):
        raise FundingError(f"{where}: cited_article_ids must be a list of strings")
    return Award(
        full_project_number=full,
        core_project_number=core,
        funder_code=str(row["funder_code"]),
        fiscal_year=fiscal_year,
        org_id=row.get("org_id"),
        org_name=row.get("org_name"),
        cited_article_ids=tuple(cited),
    )


def load_award_db(path: str | Path) -> AwardDatabase:
    path = Path(path)
    awards = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FundingError(f"{where}: invalid JSON: {exc}") from exc
            awards.append(_parse_award(row, where))
    return AwardDatabase(awards)


def award_to_row(award: Award) -> dict:
    row: dict = {
        "full_project_number": award.full_project_number,
        "core_project_number": award.core_project_number,
        "funder_code": award.funder_code,
        "fiscal_year": award.fiscal_year,
        "cited_article_ids": list(award.cited_article_ids),
    }
    if award.org_id is not None:
        row["org_id"] = award.org_id
    if award.org_name is not None:
        row["org_name"] = award.org_name
    return row


def extract_article_awards(
    record: ArticleRecord, aliases: FunderAliasTable
) -> list[ArticleAwardLink]:
    """Link drafts from the award identifiers listed in the article itself."""
    drafts = []
    for tag in record.grant_tags:
        core = parse_core_project(tag.award_text)
        if not core:
            logger.warning("article %s: empty award text in grant tag, skipped", record.article_id)
            continue
        funder = aliases.lookup(tag.funder_text)
        if funder == UNMAPPED:
            if aliases.on_unmapped == "fail":
                raise UnmappedFunderError(
                    f"article {record.article_id}: unmapped funder {tag.funder_text!r}"
                )
            logger.warning(
                "article %s: unmapped funder %r", record.article_id, tag.funder_text
            )
        drafts.append(
            ArticleAwardLink(
                article_id=record.article_id,
                core_project_number=core,
                funder_code=funder,
                source=SOURCE_ARTICLE,
            )
        )
    return drafts


def lookup_awards_citing(article_id: str, award_db: AwardDatabase) -> list[ArticleAwardLink]:
    """Link drafts from award records that cite the article."""
    return [
        ArticleAwardLink(
            article_id=article_id,
            core_project_number=award.core_project_number,
            funder_code=award.funder_code,
            source=SOURCE_AWARD_DB,
            org_id=award.org_id,
            org_name=award.org_name,
        )
        for award in award_db.awards_citing(article_id)
    ]


def impute_award_year(
    core_project_number: str, pub_year: int, award_db: AwardDatabase
) -> tuple[str | None, int]:
    """Pick the fiscal year of the project most plausibly behind a citation.

    Among projects sharing the core number, choose the one whose difference
    d = pub_year - fiscal_year is closest to one; on ties prefer the larger
    d (the project strictly before publication), then the smallest full
    project number. Without any database record, assume the year before
    publication.
    """
    records = award_db.records_for_core(core_project_number)
    if not records:
        return None, pub_year - 1
    best = min(
        records,
        key=lambda award: (
            abs((pub_year - award.fiscal_year) - 1),
            -(pub_year - award.fiscal_year),
            award.full_project_number,
        ),
    )
    return best.full_project_number, best.fiscal_year


def merge_drafts(drafts: Iterable[ArticleAwardLink]) -> list[ArticleAwardLink]:
    """Collapse drafts to one link per (article, core project number).

    The award-database draft wins when both directions found the same pair,
    since only the database carries organization identity.
    """
    merged: dict[tuple[str, str], ArticleAwardLink] = {}
    for draft in drafts:
        key = (draft.article_id, draft.core_project_number)
        current = merged.get(key)
        if current is None or (
            current.source == SOURCE_ARTICLE and draft.source == SOURCE_AWARD_DB
        ):
            merged[key] = draft
    return [merged[key] for key in sorted(merged)]


def build_links(
    articles: Iterable[ArticleRecord],
    award_db: AwardDatabase,
    aliases: FunderAliasTable,
) -> list[ArticleAwardLink]:
    """Full two-direction linkage with imputed years and org identity.

    Per article: drafts from its own grant tags plus from award records
    citing it, merged per core number; each link then gets the imputed
    full project number and year, and org/funder fields of the chosen
    award record when one exists. Deterministic and idempotent.
    """
    links: list[ArticleAwardLink] = []
    for record in sorted(articles, key=lambda r: r.article_id):
        drafts = extract_article_awards(record, aliases)
        drafts += lookup_awards_citing(record.article_id, award_db)
        for link in merge_drafts(drafts):
            if record.pub_year is None:
                if award_db.records_for_core(link.core_project_number):
                    first = award_db.records_for_core(link.core_project_number)[0]
                    link = replace(
                        link,
                        imputed_full_project=first.full_project_number,
                        imputed_year=None,
                        funder_code=first.funder_code,
                        org_id=first.org_id,
                        org_name=first.org_name,
                    )
                links.append(link)
                continue
            full, year = impute_award_year(link.core_project_number, record.pub_year, award_db)
            if full is not None:
                chosen = award_db.get(full)
                link = replace(
                    link,
                    imputed_full_project=full,
                    imputed_year=year,
                    funder_code=chosen.funder_code,
                    org_id=chosen.org_id,
                    org_name=chosen.org_name,
                )
            else:
                link = replace(link, imputed_full_project=None, imputed_year=year)
            links.append(link)
    return links


def link_to_row(link: ArticleAwardLink) -> dict:
    row: dict = {
        "article_id": link.article_id,
        "core_project_number": link.core_project_number,
        "funder_code": link.funder_code,
        "source": link.source,
        "imputed_full_project": link.imputed_full_project,
        "imputed_year": link.imputed_year,
    }
    if link.org_id is not None:
        row["org_id"] = link.org_id
    if link.org_name is not None:
        row["org_name"] = link.org_name
    return row


def link_from_row(row: dict) -> ArticleAwardLink:
    return ArticleAwardLink(
        article_id=row["article_id"],
        core_project_number=row["core_project_number"],
        funder_code=row["funder_code"],
        source=row["source"],
        imputed_full_project=row.get("imputed_full_project"),
        imputed_year=row.get("imputed_year"),
        org_id=row.get("org_id"),
        org_name=row.get("org_name"),
    )
