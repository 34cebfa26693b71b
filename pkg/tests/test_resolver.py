from __future__ import annotations

import json
import logging
import random

import pytest

from memomap.biblio import ingest_records
from memomap.corpus import ReferenceFragment, normalize_fragment
from memomap.remote import RemoteUnavailableError
from memomap.resolver import (
    METHOD_LEXICAL,
    METHOD_REMOTE,
    METHOD_UNRESOLVED,
    ResolverConfig,
    coverage_summary,
    resolve_corpus,
    resolve_fragment,
    result_to_row,
    score_candidate,
)

from conftest import article_row


def fragment(text: str, memo_id: str = "m", ordinal: int = 0) -> ReferenceFragment:
    return ReferenceFragment(
        memo_id=memo_id, ordinal=ordinal, raw_text=text, normalized_text=normalize_fragment(text)
    )


class StubRemote:
    def __init__(self, answer=None, fail=False):
        self.answer = answer
        self.fail = fail
        self.calls = 0

    def lookup(self, text):
        self.calls += 1
        if self.fail:
            raise RemoteUnavailableError("remote down")
        return self.answer


class TestScore:
    def test_verbatim_citation_scores_one(self, small_index):
        record = small_index.get("1001")
        frag = fragment(
            "Adams JQ, Brown TL. Cardiac outcomes after elective revascularization. "
            "N Engl J Med. 2004;350(12):1123-1130."
        )
        assert score_candidate(frag, record) == 1.0

    def test_disjoint_scores_zero(self, small_index):
        frag = fragment("Totally unrelated words everywhere 1955")
        assert score_candidate(frag, small_index.get("1002")) == 0.0

    def test_title_only_scores_point_six(self):
        index, _ = ingest_records(
            [
                article_row(
                    "50",
                    "Antibiotic stewardship reduces resistance rates",
                    authors=["Zhou KL"],
                    journal="Clin Infect Dis",
                    pub_year=2014,
                )
            ]
        )
        frag = fragment("Antibiotic stewardship reduces resistance rates")
        assert score_candidate(frag, index.get("50")) == pytest.approx(0.6)

    def test_year_within_one_gets_half_credit(self):
        index, _ = ingest_records([article_row("60", "unique sentinel phrase", pub_year=2005)])
        base = score_candidate(fragment("unique sentinel phrase"), index.get("60"))
        near = score_candidate(fragment("unique sentinel phrase 2006"), index.get("60"))
        exact = score_candidate(fragment("unique sentinel phrase 2005"), index.get("60"))
        assert near - base == pytest.approx(0.05)
        assert exact - base == pytest.approx(0.10)

    def test_token_permutation_invariant(self, small_index):
        record = small_index.get("1001")
        words = "adams brown cardiac outcomes after elective revascularization 2004".split()
        rng = random.Random(5)
        reference = score_candidate(fragment(" ".join(words)), record)
        for _ in range(10):
            rng.shuffle(words)
            assert score_candidate(fragment(" ".join(words)), record) == reference


class TestResolveFragment:
    def test_verbatim_fragment_resolves_lexically(self, small_index):
        frag = fragment(
            "Adams JQ, Brown TL. Cardiac outcomes after elective revascularization. "
            "N Engl J Med. 2004;350(12):1123-1130."
        )
        result = resolve_fragment(frag, small_index)
        assert result.method == METHOD_LEXICAL
        assert result.article_id == "1001"
        assert result.score == 1.0

    def test_unindexed_citation_unresolved(self, small_index):
        frag = fragment("Gray H. Anatomy of the Human Body. 20th ed. Lea and Febiger; 1918.")
        result = resolve_fragment(frag, small_index)
        assert result.method == METHOD_UNRESOLVED
        assert result.article_id is None
        assert result.score is None

    def test_near_tie_rejected(self):
        # Two records differing by one word in a 13-token title: both clear
        # the threshold, the margin rule refuses to pick one.
        shared = "a randomized controlled trial of endovascular repair versus open surgery for abdominal aneurysm"
        index, _ = ingest_records(
            [
                article_row("71", shared + " alpha", authors=["Nguyen PT"], pub_year=2015),
                article_row("72", shared + " omega", authors=["Nguyen PT"], pub_year=2015),
            ]
        )
        frag = fragment(f"Nguyen PT. {shared} alpha. J Test Med. 2015.")
        best = score_candidate(frag, index.get("71"))
        second = score_candidate(frag, index.get("72"))
        config = ResolverConfig()
        assert best >= config.threshold
        assert second >= config.threshold
        assert best - second < config.margin
        assert resolve_fragment(frag, index, config).method == METHOD_UNRESOLVED

    def test_remote_fallback_used_when_lexical_fails(self, small_index):
        remote = StubRemote(answer="9999")
        frag = fragment("FDA guidance on premarket device submissions, 2016 edition")
        result = resolve_fragment(frag, small_index, remote=remote)
        assert result.method == METHOD_REMOTE
        assert result.article_id == "9999"
        assert result.score is None
        assert remote.calls == 1

    def test_remote_not_consulted_after_lexical_hit(self, small_index):
        remote = StubRemote(answer="9999")
        frag = fragment(
            "Adams JQ, Brown TL. Cardiac outcomes after elective revascularization. "
            "N Engl J Med. 2004;350(12):1123-1130."
        )
        result = resolve_fragment(frag, small_index, remote=remote)
        assert result.method == METHOD_LEXICAL
        assert remote.calls == 0

    def test_remote_failure_degrades_to_unresolved(self, small_index, caplog):
        remote = StubRemote(fail=True)
        frag = fragment("Unfindable citation text with no index overlap whatsoever")
        with caplog.at_level(logging.WARNING):
            result = resolve_fragment(frag, small_index, remote=remote)
        assert result.method == METHOD_UNRESOLVED
        assert any("remote fallback unavailable" in r.message for r in caplog.records)


class TestResolveCorpus:
    def make_fragments(self, small_index):
        return [
            fragment(
                "Adams JQ, Brown TL. Cardiac outcomes after elective revascularization. "
                "N Engl J Med. 2004;350(12):1123-1130.",
                memo_id="m1",
                ordinal=0,
            ),
            fragment(
                "Baker RS. Long term dialysis survival in elderly cohorts. JAMA. 2001;285(4):421-429.",
                memo_id="m1",
                ordinal=1,
            ),
            fragment(
                "Edwards PL, Fisher A. Amyloid imaging in early dementia. Lancet Neurol. 2012;11(8):669-678.",
                memo_id="m2",
                ordinal=0,
            ),
            fragment("Completely unmatchable guidance document citation", memo_id="m2", ordinal=1),
        ]

    def test_ordering_and_coverage(self, small_index):
        frags = self.make_fragments(small_index)
        results, coverage = resolve_corpus(reversed(frags), small_index)
        assert [(r.memo_id, r.ordinal) for r in results] == [
            ("m1", 0),
            ("m1", 1),
            ("m2", 0),
            ("m2", 1),
        ]
        by_memo = {c.memo_id: c for c in coverage}
        assert by_memo["m1"].linked_count == 2
        assert by_memo["m1"].linked_pct == 100.0
        assert by_memo["m2"].linked_count == 1
        assert by_memo["m2"].linked_pct == 50.0

    def test_memo_without_fragments_absent(self, small_index):
        _, coverage = resolve_corpus(self.make_fragments(small_index), small_index)
        assert {c.memo_id for c in coverage} == {"m1", "m2"}

    def test_deterministic_bytes(self, small_index):
        frags = self.make_fragments(small_index)
        runs = []
        for _ in range(2):
            results, _ = resolve_corpus(frags, small_index)
            runs.append("\n".join(json.dumps(result_to_row(r), sort_keys=True) for r in results))
        assert runs[0] == runs[1]

    def test_threshold_monotonicity(self, small_index):
        frags = self.make_fragments(small_index)
        previous = None
        for threshold in (0.2, 0.4, 0.6, 0.8, 0.95):
            _, coverage = resolve_corpus(
                frags, small_index, ResolverConfig(threshold=threshold)
            )
            linked = {c.memo_id: c.linked_count for c in coverage}
            if previous is not None:
                assert all(linked[m] <= previous[m] for m in linked)
            previous = linked


class TestCoverageSummary:
    def test_two_memos(self):
        from memomap.resolver import CoverageStats

        stats = [CoverageStats("a", 10, 6), CoverageStats("b", 10, 8)]
        summary = coverage_summary(stats)
        assert summary["median_linked_pct"] == pytest.approx(70.0)
        assert summary["n"] == 2

    def test_empty(self):
        summary = coverage_summary([])
        assert summary == {"n": 0, "median_linked_pct": None, "iqr_linked_pct": None}

    def test_all_full_coverage(self):
        from memomap.resolver import CoverageStats

        stats = [CoverageStats(m, 5, 5) for m in "abcd"]
        summary = coverage_summary(stats)
        assert summary["median_linked_pct"] == 100.0
        assert summary["iqr_linked_pct"] == 0.0
