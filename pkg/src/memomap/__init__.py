"""Toolkit for mapping the research ecosystem behind policy memos.

Pipeline: ingest memo text and bibliographic records, resolve reference
fragments to articles, link articles to funding awards, then compute share
differences, signed-rank tests, and concentration measures, and emit
funder/organization flow graphs and tables.
"""

__version__ = "0.1.0"
