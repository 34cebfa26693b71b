"""Command-line entry point: ingest | resolve | link | stats | report | all."""

from __future__ import annotations

import argparse
import logging
import sys

from .biblio import IngestError
from .config import ConfigError, load_config
from .corpus import CorpusError
from .funding import FundingError
from .pipeline import (
    StageDependencyError,
    run_all,
    run_ingest,
    run_link,
    run_report,
    run_resolve,
    run_stats,
)
from .remote import RemoteUnavailableError
from .stats import StatsError

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_DEPENDENCY = 4
EXIT_REMOTE = 5

logger = logging.getLogger("memomap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memomap",
        description="Map the funding ecosystem behind policy memos.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "validate inputs and extract reference fragments"),
        ("resolve", "match fragments to article records"),
        ("link", "link resolved articles to funding awards"),
        ("stats", "compute shares, signed-rank tests, and concentration"),
        ("report", "emit tables, flow diagrams, flags, and coverage"),
        ("all", "run every stage in order"),
    ):
        stage = sub.add_parser(name, help=help_text)
        stage.add_argument("--config", required=True, help="pipeline config YAML")
        if name in ("report", "all"):
            stage.add_argument("--memo", default=None, help="restrict flow diagrams to one memo")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.command == "ingest":
            run_ingest(config)
        elif args.command == "resolve":
            run_resolve(config)
        elif args.command == "link":
            run_link(config)
        elif args.command == "stats":
            run_stats(config)
        elif args.command == "report":
            run_report(config, memo_id=args.memo)
        elif args.command == "all":
            run_all(config, memo_id=args.memo)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (CorpusError, IngestError, FundingError, StatsError) as exc:
        logger.error("input error: %s", exc)
        return EXIT_INPUT
    except StageDependencyError as exc:
        logger.error("%s", exc)
        return EXIT_DEPENDENCY
    except RemoteUnavailableError as exc:
        logger.error("remote service unavailable: %s", exc)
        return EXIT_REMOTE
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_UNEXPECTED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
