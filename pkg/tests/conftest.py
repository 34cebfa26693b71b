from __future__ import annotations

import json
from pathlib import Path

import pytest

from memomap.biblio import ingest_records
from memomap.funding import AwardDatabase, Award, FunderAliasTable


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), encoding="utf-8")
    return path


def article_row(article_id: str, title: str, **kwargs) -> dict:
    row = {
        "article_id": article_id,
        "title": title,
        "authors": kwargs.pop("authors", ["Smith JA"]),
        "journal": kwargs.pop("journal", "J Test Med"),
        "pub_year": kwargs.pop("pub_year", 2005),
    }
    row.update(kwargs)
    return row


@pytest.fixture
def small_index():
    rows = [
        article_row(
            "1001",
            "Cardiac outcomes after elective revascularization",
            authors=["Adams JQ", "Brown TL"],
            journal="N Engl J Med",
            pub_year=2004,
        ),
        article_row(
            "1002",
            "Long term dialysis survival in elderly cohorts",
            authors=["Baker RS"],
            journal="JAMA",
            pub_year=2001,
        ),
        article_row(
            "1003",
            "Amyloid imaging in early dementia",
            authors=["Edwards PL", "Fisher A"],
            journal="Lancet Neurol",
            pub_year=2012,
            retracted=True,
        ),
    ]
    index, _ = ingest_records(rows)
    return index


@pytest.fixture
def aliases():
    return FunderAliasTable(
        {
            "National Cancer Institute": "NCI",
            "NCI": "NCI",
            "National Heart Lung and Blood Institute": "NHLBI",
            "NHLBI": "NHLBI",
            "National Institute on Aging": "NIA",
            "NIA": "NIA",
        }
    )


@pytest.fixture
def award_db():
    return AwardDatabase(
        [
            Award("R01CA031770-01", "R01CA031770", "NCI", 2001, "075700000", "Duke University", ("1001",)),
            Award("R01CA031770-03", "R01CA031770", "NCI", 2003, "075700000", "Duke University", ()),
            Award("R01CA031770-04", "R01CA031770", "NCI", 2004, "075700000", "Duke University", ()),
            Award("R01CA031770-06", "R01CA031770", "NCI", 2006, "075700000", "Duke University", ()),
            Award("R01HL040050-01", "R01HL040050", "NHLBI", 1998, "049800000", "Mayo Clinic", ("1001", "1002")),
            Award("K23AG012345-02", "K23AG012345", "NIA", 2010, None, None, ("1003",)),
        ]
    )
