"""Match reference fragments to bibliographic records.

Lexical weighted-overlap scoring with a threshold and an acceptance margin;
the remote client is an optional fallback for fragments the index cannot
place. Ambiguous near-ties stay unresolved.
"""

from __future__ import annotations

import logging
import re
import statistics
from dataclasses import dataclass
from typing import Iterable

from .biblio import ArticleRecord, BiblioIndex
from .corpus import ReferenceFragment
from .remote import RemoteLookupClient, RemoteUnavailableError

logger = logging.getLogger(__name__)

METHOD_LEXICAL = "lexical"
METHOD_REMOTE = "remote_fallback"
METHOD_UNRESOLVED = "unresolved"

_YEAR_RE = re.compile(r"\b(\d{4})\b")


@dataclass(frozen=True)
class ResolverConfig:
    threshold: float = 0.55
    margin: float = 0.05
    k: int = 10


@dataclass(frozen=True)
class ResolutionResult:
    memo_id: str
    ordinal: int
    article_id: str | None
    score: float | None
    method: str


@dataclass(frozen=True)
class CoverageStats:
    memo_id: str
    fragment_count: int
    linked_count: int

    @property
    def linked_pct(self) -> float:
        return 100.0 * self.linked_count / self.fragment_count


def fragment_years(normalized_text: str) -> list[int]:
    """All plausible 4-digit publication years in a normalized fragment."""
    return [int(y) for y in _YEAR_RE.findall(normalized_text) if 1800 <= int(y) <= 2100]


def _overlap(fragment_tokens: frozenset[str], record_tokens: frozenset[str]) -> float:
    if not record_tokens:
        return 0.0
    return len(fragment_tokens & record_tokens) / len(record_tokens)


def score_candidate(fragment: ReferenceFragment, record: ArticleRecord) -> float:
    """Weighted word-overlap score in [0, 1].

    0.6 title overlap + 0.2 author-surname overlap + 0.1 journal overlap +
    0.1 year agreement (1 for an exact year in the fragment, 0.5 within one
    year). Each component is a fraction of the record side, so a fragment
    built verbatim from the record scores 1.0.
    """
    tokens = frozenset(fragment.normalized_text.split())
    title = _overlap(tokens, record.title_tokens())
    authors = _overlap(tokens, record.surnames())
    journal = _overlap(tokens, record.journal_tokens())

    year = 0.0
    if record.pub_year is not None:
        for candidate_year in fragment_years(fragment.normalized_text):
            if candidate_year == record.pub_year:
                year = 1.0
                break
            if abs(candidate_year - record.pub_year) <= 1:
                year = max(year, 0.5)

    score = 0.6 * min(title, 1.0) + 0.2 * min(authors, 1.0) + 0.1 * min(journal, 1.0) + 0.1 * year
    return min(score, 1.0)


def resolve_fragment(
    fragment: ReferenceFragment,
    index: BiblioIndex,
    config: ResolverConfig | None = None,
    remote: RemoteLookupClient | None = None,
) -> ResolutionResult:
    """Resolve one fragment to at most one record.

    The best lexical candidate is accepted only when it clears the score
    threshold and beats the runner-up by the margin; otherwise the remote
    fallback is consulted when available. Remote failures degrade to
    unresolved rather than aborting.
    """
    config = config or ResolverConfig()
    tokens = fragment.normalized_text.split()
    years = fragment_years(fragment.normalized_text)
    candidates = index.search(tokens, year_hint=years[0] if years else None, k=config.k)

    scored = sorted(
        ((score_candidate(fragment, record), record) for record in candidates),
        key=lambda pair: (-pair[0], pair[1].article_id),
    )
    if scored:
        best_score, best = scored[0]
        second_score = scored[1][0] if len(scored) > 1 else 0.0
        if best_score >= config.threshold and best_score - second_score >= config.margin:
            return ResolutionResult(
                memo_id=fragment.memo_id,
                ordinal=fragment.ordinal,
                article_id=best.article_id,
                score=best_score,
                method=METHOD_LEXICAL,
            )

    if remote is not None:
        try:
            article_id = remote.lookup(fragment.raw_text)
        except RemoteUnavailableError as exc:
            logger.warning(
                "remote fallback unavailable for %s[%d]: %s",
                fragment.memo_id,
                fragment.ordinal,
                exc,
            )
            article_id = None
        if article_id is not None:
            return ResolutionResult(
                memo_id=fragment.memo_id,
                ordinal=fragment.ordinal,
                article_id=article_id,
                score=None,
                method=METHOD_REMOTE,
            )

    return ResolutionResult(
        memo_id=fragment.memo_id,
        ordinal=fragment.ordinal,
        article_id=None,
        score=None,
        method=METHOD_UNRESOLVED,
    )


def resolve_corpus(
    fragments: Iterable[ReferenceFragment],
    index: BiblioIndex,
    config: ResolverConfig | None = None,
    remote: RemoteLookupClient | None = None,
) -> tuple[list[ResolutionResult], list[CoverageStats]]:
    """Resolve every fragment and compute per-memo coverage.

    Output is ordered by (memo_id, ordinal) regardless of input order;
    memos appear in coverage only if they contributed fragments.
    """
    config = config or ResolverConfig()
    ordered = sorted(fragments, key=lambda f: (f.memo_id, f.ordinal))
    results = [resolve_fragment(f, index, config, remote) for f in ordered]

    per_memo: dict[str, list[ResolutionResult]] = {}
    for result in results:
        per_memo.setdefault(result.memo_id, []).append(result)
    coverage = [
        CoverageStats(
            memo_id=memo_id,
            fragment_count=len(rs),
            linked_count=sum(1 for r in rs if r.method != METHOD_UNRESOLVED),
        )
        for memo_id, rs in sorted(per_memo.items())
    ]
    return results, coverage


def coverage_summary(coverage: Iterable[CoverageStats]) -> dict:
    """Median and interquartile range of linked_pct across memos.

    Memos with zero fragments never reach this point (resolve_corpus emits
    coverage rows only for memos with fragments).
    """
    pcts = sorted(c.linked_pct for c in coverage)
    if not pcts:
        return {"n": 0, "median_linked_pct": None, "iqr_linked_pct": None}
    if len(pcts) == 1:
        return {"n": 1, "median_linked_pct": pcts[0], "iqr_linked_pct": 0.0}
    q1, _, q3 = statistics.quantiles(pcts, n=4, method="inclusive")
    return {
        "n": len(pcts),
        "median_linked_pct": statistics.median(pcts),
        "iqr_linked_pct": q3 - q1,
    }


def result_to_row(result: ResolutionResult) -> dict:
    row: dict = {"memo_id": result.memo_id, "ordinal": result.ordinal, "method": result.method}
    if result.article_id is not None:
        row["article_id"] = result.article_id
    if result.score is not None:
        row["score"] = result.score
    return row


def result_from_row(row: dict) -> ResolutionResult:
    return ResolutionResult(
        memo_id=row["memo_id"],
        ordinal=int(row["ordinal"]),
        article_id=row.get("article_id"),
        score=row.get("score"),
        method=row["method"],
    )
