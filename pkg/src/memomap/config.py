"""Pipeline configuration: one YAML file owns everything that affects results."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import DEFAULT_HEADINGS, DEFAULT_MIN_FRAGMENT_CHARS, DEFAULT_TERMINATORS, SegmenterConfig
from .remote import RemoteConfig
from .resolver import ResolverConfig


class ConfigError(Exception):
    """Missing, unreadable, or invalid configuration."""


@dataclass(frozen=True)
class StatsOptions:
    denominator: str = "pool_entities"
    ci_level: float = 0.95
    min_obs: int = 5


@dataclass(frozen=True)
class PipelineConfig:
    corpus_path: Path
    records_path: Path
    award_db_path: Path
    workdir: Path
    aliases_path: Path | None = None  # None = packaged default table
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    resolver: ResolverConfig = field(default_factory=ResolverConfig)
    remote: RemoteConfig = field(default_factory=RemoteConfig)
    remote_cache_dir: Path | None = None
    on_unmapped: str = "warn"
    stats: StatsOptions = field(default_factory=StatsOptions)
    top_k: int = 10

    def cache_dir(self) -> Path:
        return self.remote_cache_dir or self.workdir / "remote_cache"

    def to_canonical_dict(self) -> dict:
        """Stable nested dict of every setting, for manifest hashing."""
        return {
            "paths": {
                "corpus": str(self.corpus_path),
                "records": str(self.records_path),
                "award_db": str(self.award_db_path),
                "aliases": None if self.aliases_path is None else str(self.aliases_path),
                "workdir": str(self.workdir),
            },
            "corpus": {
                "headings": list(self.segmenter.headings),
                "terminators": list(self.segmenter.terminators),
                "min_fragment_chars": self.segmenter.min_fragment_chars,
            },
            "resolver": {
                "threshold": self.resolver.threshold,
                "margin": self.resolver.margin,
                "k": self.resolver.k,
            },
            "remote": {
                "enabled": self.remote.enabled,
                "base_url": self.remote.base_url,
                "rps": self.remote.rps,
                "max_retries": self.remote.max_retries,
                "offline": self.remote.offline,
            },
            "funding": {"on_unmapped": self.on_unmapped},
            "stats": {
                "denominator": self.stats.denominator,
                "ci_level": self.stats.ci_level,
                "min_obs": self.stats.min_obs,
            },
            "report": {"top_k": self.top_k},
        }


def _section(data: dict, name: str) -> dict:
    value = data.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return value


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file.

    Referenced input paths are resolved relative to the config file's
    directory and must exist; result-affecting options live here, never on
    the command line.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    base = path.parent
    paths = _section(data, "paths")
    for key in ("corpus", "records", "award_db", "workdir"):
        if key not in paths:
            raise ConfigError(f"{path}: paths.{key} is required")

    def resolve(key: str) -> Path:
        return base / str(paths[key])

    corpus_cfg = _section(data, "corpus")
    resolver_cfg = _section(data, "resolver")
    remote_cfg = _section(data, "remote")
    funding_cfg = _section(data, "funding")
    stats_cfg = _section(data, "stats")
    report_cfg = _section(data, "report")

    try:
        segmenter = SegmenterConfig(
            headings=tuple(corpus_cfg.get("headings", DEFAULT_HEADINGS)),
            terminators=tuple(corpus_cfg.get("terminators", DEFAULT_TERMINATORS)),
            min_fragment_chars=int(corpus_cfg.get("min_fragment_chars", DEFAULT_MIN_FRAGMENT_CHARS)),
        )
    except Exception as exc:
        raise ConfigError(f"{path}: bad corpus section: {exc}") from exc

    config = PipelineConfig(
        corpus_path=resolve("corpus"),
        records_path=resolve("records"),
        award_db_path=resolve("award_db"),
        workdir=resolve("workdir"),
        aliases_path=base / str(paths["aliases"]) if paths.get("aliases") else None,
        segmenter=segmenter,
        resolver=ResolverConfig(
            threshold=float(resolver_cfg.get("threshold", 0.55)),
            margin=float(resolver_cfg.get("margin", 0.05)),
            k=int(resolver_cfg.get("k", 10)),
        ),
        remote=RemoteConfig(
            enabled=bool(remote_cfg.get("enabled", False)),
            base_url=str(remote_cfg.get("base_url", "")),
            rps=float(remote_cfg.get("rps", 3.0)),
            max_retries=int(remote_cfg.get("max_retries", 3)),
            offline=bool(remote_cfg.get("offline", False)),
        ),
        remote_cache_dir=base / str(remote_cfg["cache_dir"]) if remote_cfg.get("cache_dir") else None,
        on_unmapped=str(funding_cfg.get("on_unmapped", "warn")),
        stats=StatsOptions(
            denominator=str(stats_cfg.get("denominator", "pool_entities")),
            ci_level=float(stats_cfg.get("ci_level", 0.95)),
            min_obs=int(stats_cfg.get("min_obs", 5)),
        ),
        top_k=int(report_cfg.get("top_k", 10)),
    )
    validate_config(config)
    return config


def validate_config(config: PipelineConfig) -> None:
    if config.stats.min_obs < 1:
        raise ConfigError("stats.min_obs must be >= 1")
    if not 0.0 < config.stats.ci_level < 1.0:
        raise ConfigError("stats.ci_level must be in (0, 1)")
    if config.stats.denominator not in ("pool_entities", "all"):
        raise ConfigError(f"stats.denominator {config.stats.denominator!r} unknown")
    if config.on_unmapped not in ("warn", "fail"):
        raise ConfigError(f"funding.on_unmapped {config.on_unmapped!r} unknown")
    if config.resolver.k < 1:
        raise ConfigError("resolver.k must be >= 1")
    if not 0.0 <= config.resolver.threshold <= 1.0:
        raise ConfigError("resolver.threshold must be in [0, 1]")
    if config.resolver.margin < 0.0:
        raise ConfigError("resolver.margin must be >= 0")
    if config.top_k < 1:
        raise ConfigError("report.top_k must be >= 1")
    if config.remote.enabled and not config.remote.offline and not config.remote.base_url:
        raise ConfigError("remote.enabled requires remote.base_url (or offline mode)")
    for label, p in (
        ("paths.corpus", config.corpus_path),
        ("paths.records", config.records_path),
        ("paths.award_db", config.award_db_path),
    ):
        if not p.exists():
            raise ConfigError(f"{label} does not exist: {p}")
    if config.aliases_path is not None and not config.aliases_path.is_file():
        raise ConfigError(f"paths.aliases does not exist: {config.aliases_path}")
