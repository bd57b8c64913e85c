"""Encyclopedia sources: entity attributes, summaries and revision timestamps.

Two interchangeable backends are provided: a local JSON-lines dump and a
small HTTP client speaking a MediaWiki-shaped JSON contract::

    GET /entity/<name>                          -> entity record, 404 if absent
    GET /entity/<name>/revisions?start=&end=    -> {"query": {"pages": [
                                                      {"title": ..., "revisions":
                                                       [{"timestamp": ...}, ...]}]}}
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, TypeVar
from urllib.parse import quote

import requests

from .kb import Entity, ValidationError, normalize_name

log = logging.getLogger(__name__)

T = TypeVar("T")


class SourceError(RuntimeError):
    """Network or parse failure after exhausting retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(f"{message} (after {attempts} attempt{'s' if attempts != 1 else ''})")
        self.attempts = attempts


def parse_timestamp(value: str | datetime) -> datetime:
    """ISO-8601 to an aware UTC datetime; naive values are taken as UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        dt = datetime.fromisoformat(str(value).strip().replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_timestamp(dt: datetime) -> str:
    return parse_timestamp(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LabelWindow:
    """The interval (start, end] used to decide whether an entity changed."""

    start: datetime
    end: datetime

    def __post_init__(self):
        object.__setattr__(self, "start", parse_timestamp(self.start))
        object.__setattr__(self, "end", parse_timestamp(self.end))
        if not self.start < self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")

    @classmethod
    def parse(cls, text: str) -> "LabelWindow":
        """Parse ``2023-07-01..2023-08-01``."""
        try:
            start, end = text.split("..")
        except ValueError:
            raise ValueError(f"window must look like START..END, got {text!r}") from None
        return cls(parse_timestamp(start), parse_timestamp(end))

    def __str__(self) -> str:
        return f"{format_timestamp(self.start)}..{format_timestamp(self.end)}"


@dataclass(frozen=True)
class RevisionRecord:
    entity_id: str
    timestamps: tuple[datetime, ...] = ()

    def __post_init__(self):
        ts = tuple(self.timestamps)
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"revisions of {self.entity_id!r} are not strictly increasing")
        object.__setattr__(self, "timestamps", ts)


def label_entity(rev: RevisionRecord, window: LabelWindow) -> int:
    """1 if any revision falls in (start, end], else 0."""
    return int(any(window.start < t <= window.end for t in rev.timestamps))


def _normalize_revisions(entity_id: str, stamps: Iterable, window: LabelWindow) -> RevisionRecord:
    kept = sorted({t for t in map(parse_timestamp, stamps) if window.start <= t <= window.end})
    return RevisionRecord(entity_id, tuple(kept))


class DumpSource:
    """Entities and revisions from a JSON-lines dump.

    Lines follow the KB dump schema plus an optional ``revisions`` array of
    ISO-8601 timestamps.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entities: dict[str, Entity] = {}
        self._revisions: dict[str, list[str]] = {}
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    ent = Entity.from_record(rec)
                except (json.JSONDecodeError, ValidationError, TypeError, ValueError) as exc:
                    log.warning("%s:%d skipped: %s", self.path, lineno, exc)
                    continue
                key = normalize_name(ent.name)
                if key in self._entities:
                    continue
                self._entities[key] = ent
                self._revisions[key] = list(rec.get("revisions") or [])

    def __repr__(self) -> str:
        return f"DumpSource({str(self.path)!r})"

    def names(self) -> list[str]:
        return [e.name for e in self._entities.values()]

    def fetch_entity(self, name: str) -> Entity | None:
        return self._entities.get(normalize_name(name))

    def fetch_revisions(self, name: str, window: LabelWindow) -> RevisionRecord:
        key = normalize_name(name)
        ent = self._entities.get(key)
        eid = ent.id if ent is not None else name
        return _normalize_revisions(eid, self._revisions.get(key, ()), window)

    def raw_revisions(self, name: str) -> list[str]:
        return list(self._revisions.get(normalize_name(name), ()))


class HttpSource:
    """Client for the entity/revisions HTTP contract with retry and backoff."""

    def __init__(self, base_url: str, attempts: int = 3, backoff: float = 0.5,
                 timeout: float = 10.0, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self.session = session or requests.Session()

    def __repr__(self) -> str:
        return f"HttpSource({self.base_url!r})"

    def _get_json(self, path: str, params: dict | None = None):
        """GET and decode JSON; returns None on 404."""
        url = f"{self.base_url}{path}"
        last = None
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout)
                if resp.status_code == 404:
                    return None
                resp.raise_for_status()
                return resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                log.debug("GET %s failed (attempt %d): %s", url, attempt, exc)
                if attempt < self.attempts and self.backoff > 0:
                    time.sleep(self.backoff * 2 ** (attempt - 1))
        raise SourceError(f"GET {url} failed: {last}", self.attempts)

    def fetch_entity(self, name: str) -> Entity | None:
        body = self._get_json(f"/entity/{quote(name, safe='')}")
        if body is None:
            return None
        try:
            return Entity.from_record(body)
        except (ValidationError, TypeError, ValueError) as exc:
            raise SourceError(f"malformed entity body for {name!r}: {exc}", 1) from None

    def fetch_revisions(self, name: str, window: LabelWindow) -> RevisionRecord:
        body = self._get_json(
            f"/entity/{quote(name, safe='')}/revisions",
            params={"start": format_timestamp(window.start), "end": format_timestamp(window.end)},
        )
        if body is None:
            return RevisionRecord(name)
        try:
            page = body["query"]["pages"][0]
            eid = str(page.get("id") or page.get("title") or name)
            stamps = [r["timestamp"] for r in page.get("revisions", [])]
            return _normalize_revisions(eid, stamps, window)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise SourceError(f"malformed revisions body for {name!r}: {exc}", 1) from None


def open_source(location: str):
    """A source from a CLI argument: http(s) URL or dump path."""
    if location.startswith(("http://", "https://")):
        return HttpSource(location)
    return DumpSource(location)


def parallel_map(fn: Callable[..., T], items: list, parallelism: int = 1) -> list[T]:
    """Order-preserving map, threaded when ``parallelism > 1``."""
    if parallelism <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))
