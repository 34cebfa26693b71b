"""Funder-to-organization-to-memo flow graphs, tables, and coverage reports.

Flow weights are exact rationals (each funded article contributes total
weight 1, split equally over its stakeholder pairs), so conservation holds
to the bit; floats appear only at emission time.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

from .biblio import BiblioIndex
from .funding import ArticleAwardLink
from .resolver import CoverageStats, ResolutionResult, coverage_summary
from .stats import StatResult, share_of_total

KIND_FUNDER = "funder"
KIND_ORG = "org"
KIND_OTHER = "other_org"
KIND_UNKNOWN = "unknown_org"
KIND_MEMO = "memo"

_KIND_RANK = {KIND_FUNDER: 0, KIND_ORG: 1, KIND_OTHER: 2, KIND_UNKNOWN: 3, KIND_MEMO: 4}

OTHER_ORG_ID = "org:OTHER"
UNKNOWN_ORG_ID = "org:UNKNOWN"


@dataclass(frozen=True)
class FlowNode:
    id: str
    label: str
    kind: str


@dataclass(frozen=True)
class FlowEdge:
    src: str
    dst: str
    weight: Fraction


@dataclass(frozen=True)
class FlowGraph:
    memo_id: str
    nodes: tuple[FlowNode, ...]
    edges: tuple[FlowEdge, ...]

    def node_weights(self) -> dict[str, Fraction]:
        """Total flow through each node (outgoing for funders, incoming elsewhere)."""
        incoming: dict[str, Fraction] = {}
        outgoing: dict[str, Fraction] = {}
        for edge in self.edges:
            outgoing[edge.src] = outgoing.get(edge.src, Fraction(0)) + edge.weight
            incoming[edge.dst] = incoming.get(edge.dst, Fraction(0)) + edge.weight
        return {
            node.id: outgoing[node.id] if node.id in outgoing else incoming.get(node.id, Fraction(0))
            for node in self.nodes
        }


@dataclass(frozen=True)
class RetractionFlag:
    memo_id: str
    article_id: str
    note: str


def build_flow_graph(
    memo_id: str,
    links: Iterable[ArticleAwardLink],
    resolution: Iterable[ResolutionResult],
    top_k: int = 10,
) -> FlowGraph:
    """Tripartite flow graph for one memo.

    Every funded article cited by the memo distributes weight 1 equally
    across its distinct (funder, organization) stakeholder pairs. Only the
    ``top_k`` organizations by total weight keep their own node; the rest
    merge into "Other", and awards without organization identity route
    through "Unknown".
    """
    links_by_article: dict[str, list[ArticleAwardLink]] = {}
    for link in links:
        links_by_article.setdefault(link.article_id, []).append(link)

    cited = sorted(
        {r.article_id for r in resolution if r.memo_id == memo_id and r.article_id is not None}
    )

    pair_weights: dict[tuple[str, str | None], Fraction] = {}
    org_names: dict[str, str] = {}
    for article_id in cited:
        article_links = links_by_article.get(article_id)
        if not article_links:
            continue
        pairs = sorted(
            {(l.funder_code, l.org_id) for l in article_links},
            key=lambda p: (p[0], p[1] or ""),
        )
        share = Fraction(1, len(pairs))
        for pair in pairs:
            pair_weights[pair] = pair_weights.get(pair, Fraction(0)) + share
        for l in article_links:
            if l.org_id is not None and l.org_name:
                current = org_names.get(l.org_id)
                if current is None or l.org_name < current:
                    org_names[l.org_id] = l.org_name

    if not pair_weights:
        return FlowGraph(memo_id=memo_id, nodes=(), edges=())

    org_totals: dict[str | None, Fraction] = {}
    for (_, org_id), weight in pair_weights.items():
        org_totals[org_id] = org_totals.get(org_id, Fraction(0)) + weight

    ranked = sorted(
        (org_id for org_id in org_totals if org_id is not None),
        key=lambda o: (-org_totals[o], o),
    )
    named = set(ranked[:top_k])

    def org_node_id(org_id: str | None) -> str:
        if org_id is None:
            return UNKNOWN_ORG_ID
        if org_id in named:
            return f"org:{org_id}"
        return OTHER_ORG_ID

    funder_edges: dict[tuple[str, str], Fraction] = {}
    for (funder, org_id), weight in pair_weights.items():
        key = (f"funder:{funder}", org_node_id(org_id))
        funder_edges[key] = funder_edges.get(key, Fraction(0)) + weight

    memo_node_id = f"memo:{memo_id}"
    org_edges: dict[tuple[str, str], Fraction] = {}
    for (_, dst), weight in funder_edges.items():
        org_edges[(dst, memo_node_id)] = org_edges.get((dst, memo_node_id), Fraction(0)) + weight

    nodes: dict[str, FlowNode] = {}
    for funder in sorted({f for f, _ in pair_weights}):
        nodes[f"funder:{funder}"] = FlowNode(id=f"funder:{funder}", label=funder, kind=KIND_FUNDER)
    for org_id in sorted(named):
        nodes[f"org:{org_id}"] = FlowNode(
            id=f"org:{org_id}", label=org_names.get(org_id, org_id), kind=KIND_ORG
        )
    if any(o is not None and o not in named for o in org_totals):
        nodes[OTHER_ORG_ID] = FlowNode(id=OTHER_ORG_ID, label="Other", kind=KIND_OTHER)
    if None in org_totals:
        nodes[UNKNOWN_ORG_ID] = FlowNode(id=UNKNOWN_ORG_ID, label="Unknown", kind=KIND_UNKNOWN)
    nodes[memo_node_id] = FlowNode(id=memo_node_id, label=memo_id, kind=KIND_MEMO)

    edges = dict(funder_edges)
    edges.update(org_edges)

    outgoing: dict[str, Fraction] = {}
    incoming: dict[str, Fraction] = {}
    for (src, dst), weight in edges.items():
        outgoing[src] = outgoing.get(src, Fraction(0)) + weight
        incoming[dst] = incoming.get(dst, Fraction(0)) + weight
    weights = {
        node_id: outgoing[node_id] if node_id in outgoing else incoming.get(node_id, Fraction(0))
        for node_id in nodes
    }

    node_order = sorted(
        nodes.values(), key=lambda n: (_KIND_RANK[n.kind], -weights.get(n.id, Fraction(0)), n.id)
    )
    position = {node.id: i for i, node in enumerate(node_order)}
    edge_order = sorted(edges, key=lambda e: (position[e[0]], position[e[1]]))

    return FlowGraph(
        memo_id=memo_id,
        nodes=tuple(node_order),
        edges=tuple(FlowEdge(src=s, dst=d, weight=edges[(s, d)]) for s, d in edge_order),
    )


def emit_sankey(graph: FlowGraph, format: str = "json") -> bytes:
    """Serialize a flow graph; byte-deterministic for equal graphs."""
    if format == "json":
        payload = {
            "memo_id": graph.memo_id,
            "nodes": [{"id": n.id, "label": n.label, "kind": n.kind} for n in graph.nodes],
            "edges": [
                {"src": e.src, "dst": e.dst, "weight": float(e.weight)} for e in graph.edges
            ],
        }
        return (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if format == "svg":
        return _render_svg(graph)
    raise ValueError(f"unknown sankey format {format!r}")


_SVG_SCALE = 60.0  # pixels per article unit
_SVG_NODE_W = 18.0
_SVG_GAP = 14.0
_SVG_PAD = 30.0
_SVG_WIDTH = 960.0


def _render_svg(graph: FlowGraph) -> bytes:
    columns = {
        0: [n for n in graph.nodes if n.kind == KIND_FUNDER],
        1: [n for n in graph.nodes if n.kind in (KIND_ORG, KIND_OTHER, KIND_UNKNOWN)],
        2: [n for n in graph.nodes if n.kind == KIND_MEMO],
    }
    weights = graph.node_weights()
    xs = {0: _SVG_PAD, 1: (_SVG_WIDTH - _SVG_NODE_W) / 2.0, 2: _SVG_WIDTH - _SVG_PAD - _SVG_NODE_W}

    geometry: dict[str, tuple[float, float, float]] = {}  # id -> (x, y, height)
    height = 0.0
    for col, nodes in columns.items():
        y = _SVG_PAD
        for node in nodes:
            h = float(weights.get(node.id, 0)) * _SVG_SCALE
            geometry[node.id] = (xs[col], y, h)
            y += h + _SVG_GAP
        height = max(height, y - _SVG_GAP + _SVG_PAD if nodes else 2 * _SVG_PAD)

    out = io.StringIO()
    out.write(
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_SVG_WIDTH:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {_SVG_WIDTH:.0f} {height:.0f}">\n'
    )
    out.write(f"  <title>Research flows: {_xml_escape(graph.memo_id)}</title>\n")

    # Ribbons stack inside their endpoints in canonical edge order.
    used_out: dict[str, float] = {}
    used_in: dict[str, float] = {}
    for edge in graph.edges:
        sx, sy, _ = geometry[edge.src]
        dx, dy, _ = geometry[edge.dst]
        thickness = float(edge.weight) * _SVG_SCALE
        y0 = sy + used_out.get(edge.src, 0.0) + thickness / 2.0
        y1 = dy + used_in.get(edge.dst, 0.0) + thickness / 2.0
        used_out[edge.src] = used_out.get(edge.src, 0.0) + thickness
        used_in[edge.dst] = used_in.get(edge.dst, 0.0) + thickness
        x0 = sx + _SVG_NODE_W
        x1 = dx
        mx = (x0 + x1) / 2.0
        side = "left" if edge.src.startswith("funder:") else "right"
        out.write(
            f'  <path class="ribbon ribbon-{side}" '
            f'd="M {x0:.3f} {y0:.3f} C {mx:.3f} {y0:.3f} {mx:.3f} {y1:.3f} {x1:.3f} {y1:.3f}" '
            f'fill="none" stroke="#999999" stroke-opacity="0.45" stroke-width="{thickness:.3f}"/>\n'
        )

    fills = {
        KIND_FUNDER: "#3b6fb6",
        KIND_ORG: "#8a8a8a",
        KIND_OTHER: "#b5b5b5",
        KIND_UNKNOWN: "#d9d9d9",
        KIND_MEMO: "#c0392b",
    }
    for node in graph.nodes:
        x, y, h = geometry[node.id]
        out.write(
            f'  <rect class="node node-{node.kind}" x="{x:.3f}" y="{y:.3f}" '
            f'width="{_SVG_NODE_W:.0f}" height="{h:.3f}" fill="{fills[node.kind]}"/>\n'
        )
        anchor = "start" if node.kind == KIND_FUNDER else "end" if node.kind == KIND_MEMO else "middle"
        tx = (
            x + _SVG_NODE_W + 4
            if node.kind == KIND_FUNDER
            else x - 4
            if node.kind == KIND_MEMO
            else x + _SVG_NODE_W / 2.0
        )
        ty = y - 3 if anchor == "middle" else y + h / 2.0
        out.write(
            f'  <text x="{tx:.3f}" y="{ty:.3f}" font-family="sans-serif" font-size="11" '
            f'text-anchor="{anchor}">{_xml_escape(node.label)}</text>\n'
        )
    out.write("</svg>\n")
    return out.getvalue().encode("utf-8")


def _xml_escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _csv_buffer() -> tuple[io.StringIO, csv.writer]:
    buffer = io.StringIO()
    return buffer, csv.writer(buffer, lineterminator="\n")


def _format(value: float | None, spec: str) -> str:
    return "" if value is None else format(value, spec)


def emit_tables(
    links: Iterable[ArticleAwardLink],
    funder_stats: Iterable[StatResult],
    org_stats: Iterable[StatResult],
) -> tuple[str, str]:
    """Funder and recipient tables as CSV text.

    Counts are article-award links; percentages use the grand total, so
    each table's percent column sums to 100 up to rounding. Entities
    without a statistical result (too few observation years, or no
    comparable identity such as unknown orgs) keep blank test columns.
    """
    links = list(links)
    total = len(links)
    funder_by_entity = {s.entity: s for s in funder_stats}
    org_by_entity = {s.entity: s for s in org_stats}

    header = [
        "entity",
        "label",
        "n_awards",
        "pct_awards",
        "n_obs",
        "median_diff",
        "ci_lo",
        "ci_hi",
        "p_value",
    ]

    def stat_cells(stat: StatResult | None) -> list[str]:
        if stat is None:
            return ["", "", "", "", ""]
        return [
            str(stat.n),
            _format(stat.median_diff, ".6g"),
            _format(stat.ci_lo, ".6g"),
            _format(stat.ci_hi, ".6g"),
            _format(stat.p_value, ".3g"),
        ]

    funder_counts: dict[str, int] = {}
    for link in links:
        funder_counts[link.funder_code] = funder_counts.get(link.funder_code, 0) + 1
    buffer_f, writer_f = _csv_buffer()
    writer_f.writerow(header)
    for funder in sorted(funder_counts):
        count = funder_counts[funder]
        writer_f.writerow(
            [funder, funder, str(count), f"{share_of_total(count, total):.2f}"]
            + stat_cells(funder_by_entity.get(funder))
        )

    org_counts: dict[str, int] = {}
    org_labels: dict[str, str] = {}
    for link in links:
        org = link.org_id if link.org_id is not None else "UNKNOWN"
        org_counts[org] = org_counts.get(org, 0) + 1
        if link.org_id is not None and link.org_name:
            current = org_labels.get(org)
            if current is None or link.org_name < current:
                org_labels[org] = link.org_name
    org_labels.setdefault("UNKNOWN", "Unknown")
    buffer_o, writer_o = _csv_buffer()
    writer_o.writerow(header)
    for org in sorted(org_counts):
        count = org_counts[org]
        writer_o.writerow(
            [org, org_labels.get(org, org), str(count), f"{share_of_total(count, total):.2f}"]
            + stat_cells(org_by_entity.get(org) if org != "UNKNOWN" else None)
        )

    return buffer_f.getvalue(), buffer_o.getvalue()


def flag_retracted(
    resolution: Iterable[ResolutionResult], index: BiblioIndex
) -> list[RetractionFlag]:
    """One flag per (memo, retracted article) pair, sorted."""
    pairs = sorted(
        {(r.memo_id, r.article_id) for r in resolution if r.article_id is not None}
    )
    flags = []
    for memo_id, article_id in pairs:
        record = index.get(article_id)
        if record is not None and record.retracted:
            flags.append(
                RetractionFlag(memo_id=memo_id, article_id=article_id, note=record.title)
            )
    return flags


def coverage_report(coverage: Iterable[CoverageStats]) -> tuple[str, str]:
    """Scatter CSV (memo size vs. linkage) plus a summary CSV."""
    coverage = sorted(coverage, key=lambda c: c.memo_id)
    buffer_s, writer_s = _csv_buffer()
    writer_s.writerow(["memo_id", "fragment_count", "linked_pct"])
    for row in coverage:
        writer_s.writerow([row.memo_id, str(row.fragment_count), str(row.linked_pct)])

    summary = coverage_summary(coverage)
    buffer_m, writer_m = _csv_buffer()
    writer_m.writerow(["n", "median_linked_pct", "iqr_linked_pct"])
    writer_m.writerow(
        [
            str(summary["n"]),
            "" if summary["median_linked_pct"] is None else str(summary["median_linked_pct"]),
            "" if summary["iqr_linked_pct"] is None else str(summary["iqr_linked_pct"]),
        ]
    )
    return buffer_s.getvalue(), buffer_m.getvalue()
