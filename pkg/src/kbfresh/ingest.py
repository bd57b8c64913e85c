"""Turn user query logs into a seed list of knowledge-base entities."""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Iterator

from .kb import KnowledgeBase, normalize_name

log = logging.getLogger(__name__)

MIN_SENTENCE_CHARS = 10

PRONOUNS = frozenset("""
i me my mine myself you your yours yourself yourselves he him his himself she her hers
herself it its itself we us our ours ourselves they them their theirs themselves
who whom whose which what whoever whatever whichever this that these those
someone somebody something anyone anybody anything everyone everybody everything
no-one nobody nothing one
""".split())

STOPWORDS = frozenset("""
a an the and or but if then else of at by for with about against between into through
during before after above below to from up down in out on off over under again further
once here there when where why how all any both each few more most other some such no
nor not only own same so than too very can will just should now is are was were be been
being have has had having do does did doing would could might must shall may also near
get got give tell show find please
""".split())


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Split on Unicode whitespace and strip leading/trailing punctuation."""
    tokens = []
    for raw in text.split():
        start, end = 0, len(raw)
        while start < end and _is_punct(raw[start]):
            start += 1
        while end > start and _is_punct(raw[end - 1]):
            end -= 1
        if start < end:
            tokens.append(raw[start:end])
    return tokens


def default_noun_detector(token: str) -> bool:
    """Closed-class pronoun lexicon, else any non-stopword of 3+ characters."""
    t = token.lower()
    if t in PRONOUNS:
        return True
    return len(t) >= 3 and t not in STOPWORDS and any(ch.isalpha() for ch in t)


def validate_sentence(text: str, noun_detector: Callable[[str], bool] = default_noun_detector) -> bool:
    trimmed = text.strip()
    if len(trimmed) < MIN_SENTENCE_CHARS:
        return False
    return any(noun_detector(tok) for tok in tokenize(trimmed))


def ngram_candidates(text: str, n_max: int) -> list[str]:
    """All contiguous token windows of size 1..n_max, shorter windows first.

    >>> ngram_candidates("a b", 2)
    ['a', 'b', 'a b']
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    tokens = tokenize(text)
    out: list[str] = []
    seen: set[str] = set()
    for size in range(1, min(n_max, len(tokens)) + 1):
        for start in range(len(tokens) - size + 1):
            cand = " ".join(tokens[start:start + size])
            if cand not in seen:
                seen.add(cand)
                out.append(cand)
    return out


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def bounded_edit_distance(a: str, b: str, max_dist: int) -> int | None:
    """Levenshtein distance if it is <= max_dist, else None.

    Only the diagonal band of width ``2 * max_dist + 1`` is filled and the
    scan stops once every cell in a row exceeds the bound.
    """
    if abs(len(a) - len(b)) > max_dist:
        return None
    if a == b:
        return 0
    inf = max_dist + 1
    prev = [j if j <= max_dist else inf for j in range(len(b) + 1)]
    for i in range(1, len(a) + 1):
        lo = max(1, i - max_dist)
        hi = min(len(b), i + max_dist)
        cur = [inf] * (len(b) + 1)
        cur[0] = i if i <= max_dist else inf
        ca = a[i - 1]
        for j in range(lo, hi + 1):
            v = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != b[j - 1]))
            cur[j] = v if v < inf else inf
        if min(cur[max(0, lo - 1):hi + 1]) >= inf:
            return None
        prev = cur
    d = prev[len(b)]
    return d if d <= max_dist else None


def scaled_max_dist(candidate: str, cap: int = 2) -> int:
    return min(cap, max(1, len(candidate) // 8))


class NameMatcher:
    """Nearest-name lookup over a KB, bucketed by name length.

    Results are memoized per (candidate, max_dist) since query logs repeat
    the same n-grams heavily.
    """

    def __init__(self, kb: KnowledgeBase):
        self.kb = kb
        self._by_len: dict[int, list[tuple[str, str, str]]] = {}
        for key, ent in kb.names.items():
            self._by_len.setdefault(len(key), []).append((key, ent.name, ent.id))
        self._cache: dict[tuple[str, int], tuple[str, int] | None] = {}

    def match(self, candidate: str, max_dist: int) -> tuple[str, int] | None:
        if max_dist < 0:
            raise ValueError("max_dist must be >= 0")
        norm = normalize_name(candidate)
        ck = (norm, max_dist)
        if ck in self._cache:
            return self._cache[ck]
        best = None
        exact = self.kb.names.get(norm)
        if exact is not None:
            best = (0, exact.name, exact.id)
        else:
            for length in range(len(norm) - max_dist, len(norm) + max_dist + 1):
                for key, name, eid in self._by_len.get(length, ()):
                    d = bounded_edit_distance(norm, key, max_dist)
                    if d is not None and (best is None or (d, name, eid) < best):
                        best = (d, name, eid)
        result = None if best is None else (best[2], best[0])
        self._cache[ck] = result
        return result


def match_entity(candidate: str, kb: KnowledgeBase, max_dist: int) -> tuple[str, int] | None:
    """Closest KB entity to ``candidate`` as ``(entity_id, distance)``, or None.

    Ties go to the lexicographically smallest entity name, then smallest id.
    """
    return NameMatcher(kb).match(candidate, max_dist)


@dataclass(frozen=True)
class QuerySentence:
    text: str
    timestamp: datetime | None = None


@dataclass
class SeedEntity:
    entity_id: str
    name: str
    matched_surface: str
    frequency: int
    edit_distance: int

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "SeedEntity":
        return cls(rec["entity_id"], rec["name"], rec["matched_surface"],
                   int(rec["frequency"]), int(rec["edit_distance"]))


@dataclass(frozen=True)
class SeedConfig:
    n_max: int = 4
    max_dist: int | None = 2  # None: scale with candidate length
    noun_detector: Callable[[str], bool] = default_noun_detector


def _parse_ts(value) -> datetime | None:
    if not value:
        return None
    return datetime.fromisoformat(str(value).replace("Z", "+00:00"))


def read_log(path: str | Path) -> Iterator[QuerySentence]:
    """Yield query sentences from a JSON-lines or plain-text log.

    The format is decided by the first non-empty line: a JSON object with a
    ``text`` field means JSON-lines, anything else means one sentence per line.
    """
    with open(path, encoding="utf-8") as fh:
        is_json = None
        for line in fh:
            if not line.strip():
                continue
            if is_json is None:
                try:
                    first = json.loads(line)
                    is_json = isinstance(first, dict) and "text" in first
                except json.JSONDecodeError:
                    is_json = False
            if is_json:
                try:
                    rec = json.loads(line)
                    yield QuerySentence(str(rec["text"]), _parse_ts(rec.get("ts")))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    log.warning("skipping malformed log line: %s", exc)
            else:
                yield QuerySentence(line.rstrip("\n"))


def extract_seeds(sentences: Iterable[QuerySentence | str], kb: KnowledgeBase,
                  config: SeedConfig = SeedConfig()) -> list[SeedEntity]:
    """Match n-grams of valid sentences against the KB and aggregate per entity.

    An entity counts once per sentence it is matched in. The reported surface
    and distance are the closest match seen (earliest on ties). Output is
    sorted by frequency descending, then entity name, then id.
    """
    matcher = NameMatcher(kb)
    agg: dict[str, SeedEntity] = {}
    for s in sentences:
        text = s.text if isinstance(s, QuerySentence) else s
        if not validate_sentence(text, config.noun_detector):
            continue
        hits: dict[str, tuple[int, str]] = {}
        for cand in ngram_candidates(text, config.n_max):
            md = config.max_dist if config.max_dist is not None else scaled_max_dist(cand)
            m = matcher.match(cand, md)
            if m is None:
                continue
            eid, d = m
            if eid not in hits or d < hits[eid][0]:
                hits[eid] = (d, cand)
        for eid, (d, cand) in hits.items():
            seed = agg.get(eid)
            if seed is None:
                agg[eid] = SeedEntity(eid, kb.get(eid).name, cand, 1, d)
            else:
                seed.frequency += 1
                if d < seed.edit_distance:
                    seed.edit_distance, seed.matched_surface = d, cand
    return sorted(agg.values(), key=lambda s: (-s.frequency, s.name, s.entity_id))


def save_seeds(seeds: list[SeedEntity], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in seeds:
            fh.write(json.dumps(s.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


def load_seeds(path: str | Path) -> list[SeedEntity]:
    with open(path, encoding="utf-8") as fh:
        return [SeedEntity.from_record(json.loads(ln)) for ln in fh if ln.strip()]
