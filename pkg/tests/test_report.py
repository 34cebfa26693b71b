from __future__ import annotations

import random
import re
from fractions import Fraction

import pytest

from memomap.funding import ArticleAwardLink
from memomap.resolver import CoverageStats, ResolutionResult
from memomap.report import (
    UNKNOWN_ORG_ID,
    build_flow_graph,
    coverage_report,
    emit_sankey,
    emit_tables,
    flag_retracted,
)
from memomap.stats import StatResult


def link(article_id, core, funder, org_id=None, org_name=None, year=2000):
    return ArticleAwardLink(
        article_id=article_id,
        core_project_number=core,
        funder_code=funder,
        source="award_database" if org_id else "article_metadata",
        imputed_full_project=f"{core}-01" if org_id else None,
        imputed_year=year,
        org_id=org_id,
        org_name=org_name,
    )


def resolved(memo_id, ordinal, article_id):
    return ResolutionResult(
        memo_id=memo_id, ordinal=ordinal, article_id=article_id, score=1.0, method="lexical"
    )


def graph_sums(graph):
    funder_out = sum(
        (e.weight for e in graph.edges if e.src.startswith("funder:")), Fraction(0)
    )
    org_in = funder_out
    memo_in = sum(
        (e.weight for e in graph.edges if e.dst.startswith("memo:")), Fraction(0)
    )
    return funder_out, org_in, memo_in


class TestFlowGraph:
    def test_single_article_single_award(self):
        graph = build_flow_graph(
            "m1",
            [link("a1", "C1", "NCI", org_id="111", org_name="Duke University")],
            [resolved("m1", 0, "a1")],
        )
        edges = {(e.src, e.dst): e.weight for e in graph.edges}
        assert edges == {
            ("funder:NCI", "org:111"): Fraction(1),
            ("org:111", "memo:m1"): Fraction(1),
        }

    def test_two_awards_split_weight(self):
        graph = build_flow_graph(
            "m1",
            [
                link("a1", "C1", "NCI", org_id="111", org_name="Org One"),
                link("a1", "C2", "NCI", org_id="222", org_name="Org Two"),
            ],
            [resolved("m1", 0, "a1")],
        )
        edges = {(e.src, e.dst): e.weight for e in graph.edges}
        assert edges[("funder:NCI", "org:111")] == Fraction(1, 2)
        assert edges[("funder:NCI", "org:222")] == Fraction(1, 2)

    def test_missing_org_routes_through_unknown(self):
        graph = build_flow_graph(
            "m1",
            [link("a1", "C1", "NHLBI")],
            [resolved("m1", 0, "a1")],
        )
        edges = {(e.src, e.dst): e.weight for e in graph.edges}
        assert edges[("funder:NHLBI", UNKNOWN_ORG_ID)] == Fraction(1)
        assert edges[(UNKNOWN_ORG_ID, "memo:m1")] == Fraction(1)

    def test_top_k_merge_preserves_totals_exactly(self):
        # 12 orgs with distinct weights: 10 stay named, the bottom 2 merge.
        links = []
        resolution = []
        for i in range(12):
            for j in range(12 - i):  # org i funds 12-i articles
                article = f"a{i}_{j}"
                links.append(link(article, f"C{i}", "NCI", org_id=f"{i:03d}", org_name=f"Org {i}"))
                resolution.append(resolved("m1", len(resolution), article))
        graph = build_flow_graph("m1", links, resolution, top_k=10)

        named = [n for n in graph.nodes if n.kind == "org"]
        assert len(named) == 10
        other = next(n for n in graph.nodes if n.kind == "other_org")
        weights = graph.node_weights()
        # Bottom two orgs fund 1 and 2 articles; the merge is exact.
        assert weights[other.id] == Fraction(3)
        total_articles = len(resolution)
        funder_out, org_in, memo_in = graph_sums(graph)
        assert funder_out == org_in == memo_in == Fraction(total_articles)

    def test_tie_at_boundary_breaks_on_org_id(self):
        links = []
        resolution = []
        for i, article in enumerate(["a1", "a2"]):
            resolution.append(resolved("m1", i, article))
        links.append(link("a1", "C1", "NCI", org_id="bbb", org_name="B"))
        links.append(link("a2", "C2", "NCI", org_id="aaa", org_name="A"))
        graph = build_flow_graph("m1", links, resolution, top_k=1)
        named = [n for n in graph.nodes if n.kind == "org"]
        assert [n.id for n in named] == ["org:aaa"]

    def test_zero_funded_articles_empty_graph(self):
        graph = build_flow_graph("m1", [], [resolved("m1", 0, "a1")])
        assert graph.nodes == () and graph.edges == ()

    def test_multiple_awards_same_pair_collapse(self):
        # Two awards with the same (funder, org) are one stakeholder pair.
        graph = build_flow_graph(
            "m1",
            [
                link("a1", "C1", "NCI", org_id="111", org_name="Org"),
                link("a1", "C2", "NCI", org_id="111", org_name="Org"),
            ],
            [resolved("m1", 0, "a1")],
        )
        edges = {(e.src, e.dst): e.weight for e in graph.edges}
        assert edges[("funder:NCI", "org:111")] == Fraction(1)

    def test_conservation_on_random_fixtures(self):
        rng = random.Random(21)
        for _ in range(25):
            links, resolution = [], []
            n_articles = rng.randint(1, 15)
            for i in range(n_articles):
                article = f"a{i}"
                resolution.append(resolved("m", i, article))
                for _ in range(rng.randint(0, 3)):
                    org = rng.choice([None, "o1", "o2", "o3", "o4"])
                    links.append(
                        link(
                            article,
                            f"C{rng.randint(0, 5)}",
                            rng.choice(["NCI", "NIA", "NHLBI"]),
                            org_id=org,
                            org_name=org and f"Org {org}",
                        )
                    )
            graph = build_flow_graph("m", links, resolution, top_k=2)
            funded = len({l.article_id for l in links if any(r.article_id == l.article_id for r in resolution)})
            funder_out, org_in, memo_in = graph_sums(graph)
            assert funder_out == org_in == memo_in == Fraction(funded)


class TestSankey:
    def make_graph(self):
        return build_flow_graph(
            "m1",
            [
                link("a1", "C1", "NCI", org_id="111", org_name="Org One"),
                link("a1", "C2", "NIA", org_id="222", org_name="Org Two"),
                link("a2", "C3", "NCI"),
            ],
            [resolved("m1", 0, "a1"), resolved("m1", 1, "a2")],
        )

    def test_empty_graph_json(self):
        from memomap.report import FlowGraph

        payload = emit_sankey(FlowGraph("m", (), ()), "json")
        assert b'"nodes": []' in payload and b'"edges": []' in payload

    def test_json_deterministic(self):
        assert emit_sankey(self.make_graph(), "json") == emit_sankey(self.make_graph(), "json")

    def test_json_node_order(self):
        import json as jsonlib

        payload = jsonlib.loads(emit_sankey(self.make_graph(), "json"))
        kinds = [n["kind"] for n in payload["nodes"]]
        assert kinds == sorted(kinds, key=["funder", "org", "other_org", "unknown_org", "memo"].index)

    def test_svg_ribbon_conservation(self):
        graph = self.make_graph()
        svg = emit_sankey(graph, "svg").decode("utf-8")
        widths_left = [
            float(m)
            for m in re.findall(r'ribbon-left[^>]*stroke-width="([0-9.]+)"', svg)
        ]
        widths_right = [
            float(m)
            for m in re.findall(r'ribbon-right[^>]*stroke-width="([0-9.]+)"', svg)
        ]
        from memomap.report import _SVG_SCALE

        funded = 2
        assert abs(sum(widths_left) - funded * _SVG_SCALE) <= 0.5
        assert abs(sum(widths_right) - funded * _SVG_SCALE) <= 0.5

    def test_svg_deterministic(self):
        assert emit_sankey(self.make_graph(), "svg") == emit_sankey(self.make_graph(), "svg")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_sankey(self.make_graph(), "png")


class TestTables:
    def test_single_funder_hundred_percent(self):
        links = [link("a1", "C1", "NCI"), link("a2", "C2", "NCI")]
        funder_csv, _ = emit_tables(links, [], [])
        lines = funder_csv.strip().splitlines()
        assert lines[1].startswith("NCI,NCI,2,100.00")

    def test_blank_stats_for_small_entities(self):
        links = [link("a1", "C1", "NCI"), link("a2", "C2", "PHS")]
        stats = [StatResult("NCI", 12, 5.0, 2.0, 8.0, 0.001)]
        funder_csv, _ = emit_tables(links, stats, [])
        rows = {r.split(",")[0]: r for r in funder_csv.strip().splitlines()[1:]}
        assert rows["NCI"].endswith("12,5,2,8,0.001")
        assert rows["PHS"].endswith(",,,,")

    def test_recipient_unknown_row(self):
        links = [
            link("a1", "C1", "NCI", org_id="111", org_name="Org One"),
            link("a2", "C2", "NCI"),
        ]
        _, recipient_csv = emit_tables(links, [], [])
        rows = recipient_csv.strip().splitlines()[1:]
        entities = [r.split(",")[0] for r in rows]
        assert "UNKNOWN" in entities and "111" in entities

    def test_percent_column_sums_to_hundred(self):
        rng = random.Random(33)
        links = [
            link(f"a{i}", f"C{i}", rng.choice(["NCI", "NIA", "NHLBI", "PHS", "UNMAPPED"]))
            for i in range(57)
        ]
        funder_csv, recipient_csv = emit_tables(links, [], [])
        for text in (funder_csv, recipient_csv):
            rows = text.strip().splitlines()[1:]
            total = sum(float(r.split(",")[3]) for r in rows)
            assert abs(total - 100.0) <= 0.01 * len(rows)

    def test_published_share_column(self):
        # Spot cells of the public funder table: counts over N = 2742.
        links = []
        for funder, count in (("NCATS", 200), ("NCI", 566), ("NHLBI", 552), ("OTHER", 1424)):
            links += [link(f"{funder}{i}", f"C{funder}{i}", funder) for i in range(count)]
        funder_csv, _ = emit_tables(links, [], [])
        cells = {
            r.split(",")[0]: r.split(",")[3] for r in funder_csv.strip().splitlines()[1:]
        }
        assert cells["NCATS"] == "7.29"
        assert cells["NCI"] == "20.64"
        assert cells["NHLBI"] == "20.13"


class TestFlags:
    def test_no_retractions(self, small_index):
        resolution = [resolved("m1", 0, "1001")]
        assert flag_retracted(resolution, small_index) == []

    def test_one_article_two_memos(self, small_index):
        resolution = [resolved("m1", 0, "1003"), resolved("m2", 0, "1003")]
        flags = flag_retracted(resolution, small_index)
        assert [(f.memo_id, f.article_id) for f in flags] == [("m1", "1003"), ("m2", "1003")]

    def test_matches_set_join_oracle(self, small_index):
        rng = random.Random(44)
        resolution = [
            resolved(f"m{rng.randint(1, 4)}", i, rng.choice(["1001", "1002", "1003"]))
            for i in range(30)
        ]
        retracted_ids = {
            r.article_id for r in (small_index.get(a) for a in ("1001", "1002", "1003")) if r.retracted
        }
        expected = sorted(
            {
                (r.memo_id, r.article_id)
                for r in resolution
                if r.article_id in retracted_ids
            }
        )
        flags = flag_retracted(resolution, small_index)
        assert [(f.memo_id, f.article_id) for f in flags] == expected

    def test_duplicate_citation_single_flag(self, small_index):
        resolution = [resolved("m1", 0, "1003"), resolved("m1", 1, "1003")]
        assert len(flag_retracted(resolution, small_index)) == 1


class TestCoverageReport:
    def test_two_memos_median(self):
        scatter, summary = coverage_report(
            [CoverageStats("a", 10, 6), CoverageStats("b", 10, 8)]
        )
        assert "a,10,60.0" in scatter
        assert summary.splitlines()[1].startswith("2,70.0")

    def test_full_coverage(self):
        _, summary = coverage_report([CoverageStats(m, 4, 4) for m in "abc"])
        assert summary.splitlines()[1] == "3,100.0,0.0"

    def test_empty_corpus(self):
        scatter, summary = coverage_report([])
        assert scatter.strip() == "memo_id,fragment_count,linked_pct"
        assert summary.splitlines()[1] == "0,,"
