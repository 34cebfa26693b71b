"""Fallback lookup against a remote article-search API.

Responses are cached on disk keyed by query hash, requests go through a
rate-limit gate, and offline mode answers from the cache only. An id is
returned only when the service reports exactly one match.
"""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

logger = logging.getLogger(__name__)


class RemoteUnavailableError(Exception):
    """The remote service kept failing after the configured retries."""


@dataclass(frozen=True)
class RemoteConfig:
    enabled: bool = False
    base_url: str = ""
    rps: float = 3.0
    max_retries: int = 3
    offline: bool = False


def query_hash(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()


def _default_fetch(url: str, params: dict) -> dict:
    import requests

    response = requests.get(url, params=params, timeout=30)
    response.raise_for_status()
    return response.json()


class RemoteLookupClient:
    """Term-query client with disk cache, rate limiting, and backoff.

    The service contract: GET base_url?term=<text> returning
    {"ids": [...]}; the lookup resolves only on a unique id.
    """

    def __init__(
        self,
        config: RemoteConfig,
        cache_dir: str | Path,
        fetch: Callable[[str, dict], dict] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.cache_dir = Path(cache_dir)
        self._fetch = fetch or _default_fetch
        self._sleep = sleep
        self._gate = threading.Lock()
        self._last_request = 0.0

    def _cache_path(self, query: str) -> Path:
        return self.cache_dir / f"{query_hash(query)}.json"

    def _read_cache(self, query: str) -> dict | None:
        path = self._cache_path(query)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def _write_cache(self, query: str, payload: dict) -> None:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        path = self._cache_path(query)
        path.write_text(
            json.dumps(payload, sort_keys=True, ensure_ascii=True) + "\n", encoding="utf-8"
        )

    def _throttle(self) -> None:
        if self.config.rps <= 0:
            return
        interval = 1.0 / self.config.rps
        with self._gate:
            now = time.monotonic()
            wait = self._last_request + interval - now
            if wait > 0:
                self._sleep(wait)
            self._last_request = time.monotonic()

    def _request(self, query: str) -> dict:
        delay = 0.5
        last_exc: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            self._throttle()
            try:
                return self._fetch(self.config.base_url, {"term": query, "format": "json"})
            except Exception as exc:
                last_exc = exc
                logger.warning("remote lookup attempt %d failed: %s", attempt + 1, exc)
        raise RemoteUnavailableError(
            f"remote lookup failed after {self.config.max_retries + 1} attempts: {last_exc}"
        )

    def lookup(self, fragment_text: str) -> str | None:
        """Return the article id for a fragment, or None.

        None covers ambiguous multi-match responses, empty responses, and
        offline cache misses; transport failure past the retry cap raises
        RemoteUnavailableError.
        """
        payload = self._read_cache(fragment_text)
        if payload is None:
            if self.config.offline:
                logger.info("offline mode: remote cache miss, skipping lookup")
                return None
            payload = self._request(fragment_text)
            self._write_cache(fragment_text, payload)
        ids = payload.get("ids") or []
        if len(ids) == 1:
            return str(ids[0])
        return None
