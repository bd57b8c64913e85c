"""Core domain types, the knowledge-base index and JSON-lines persistence."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

log = logging.getLogger(__name__)

GRAPH_STORE_VERSION = 1

CENTER = "Center"
VALUE = "Value"
TOPIC = "Topic"
ROLES = (CENTER, VALUE, TOPIC)

_WS = re.compile(r"\s+")


class ValidationError(ValueError):
    """A record or graph violates a domain invariant."""


def normalize_name(name: str) -> str:
    """NFC, lowercase, trimmed, internal whitespace collapsed to one space."""
    return _WS.sub(" ", unicodedata.normalize("NFC", name)).strip().lower()


def normalize_predicate(predicate: str) -> str:
    return _WS.sub(" ", predicate).strip().lower()


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str

    def __post_init__(self):
        for name in ("subject", "predicate", "object"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValidationError(f"triple {name} must be a non-empty string")

    @property
    def key(self) -> tuple[str, str]:
        return (self.predicate, self.object)


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    summary: str = ""
    triples: tuple[Triple, ...] = ()
    topic: int | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("entity id must be a non-empty string")
        if not isinstance(self.name, str) or not self.name.strip():
            raise ValidationError(f"entity {self.id!r} has an empty name")
        object.__setattr__(self, "triples", tuple(self.triples))
        for t in self.triples:
            if t.subject != self.name:
                raise ValidationError(
                    f"entity {self.id!r}: triple subject {t.subject!r} != name {self.name!r}"
                )

    @classmethod
    def from_record(cls, record: Mapping) -> "Entity":
        """Build from a dump record: ``{"id", "name", "summary", "triples": [[p, o], ...]}``."""
        if not isinstance(record, Mapping):
            raise ValidationError("record is not a JSON object")
        try:
            eid, name = record["id"], record["name"]
        except KeyError as exc:
            raise ValidationError(f"record missing field {exc}") from None
        if not isinstance(name, str):
            raise ValidationError("name must be a string")
        pairs = record.get("triples") or []
        if not isinstance(pairs, list):
            raise ValidationError("triples must be an array")
        triples = []
        for pair in pairs:
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ValidationError(f"bad triple {pair!r}")
            triples.append(Triple(name, str(pair[0]), str(pair[1])))
        summary = record.get("summary") or ""
        if not isinstance(summary, str):
            raise ValidationError("summary must be a string")
        topic = record.get("topic")
        return cls(str(eid), name, summary, tuple(triples), None if topic is None else int(topic))

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "name": self.name,
            "summary": self.summary,
            "triples": [[t.predicate, t.object] for t in self.triples],
        }
        if self.topic is not None:
            rec["topic"] = self.topic
        return rec

    def with_triples(self, triples: Iterable[Triple]) -> "Entity":
        return replace(self, triples=tuple(triples))


class KnowledgeBase:
    """Immutable collection of entities indexed by normalized name and by id."""

    def __init__(self, entities: Iterable[Entity] = (), snapshot_time: datetime | None = None,
                 skipped: int = 0):
        by_name: dict[str, Entity] = {}
        by_id: dict[str, Entity] = {}
        for e in entities:
            key = normalize_name(e.name)
            if key in by_name:
                raise ValidationError(f"duplicate normalized name {key!r}")
            if e.id in by_id:
                raise ValidationError(f"duplicate entity id {e.id!r}")
            by_name[key] = e
            by_id[e.id] = e
        self._by_name = MappingProxyType(by_name)
        self._by_id = MappingProxyType(by_id)
        self.snapshot_time = snapshot_time or datetime.now(timezone.utc)
        self.skipped = skipped

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[Entity]:
        return iter(self._by_id.values())

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self._by_id

    def __eq__(self, other) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return list(self) == list(other)

    @property
    def names(self) -> Mapping[str, Entity]:
        """Normalized name -> entity."""
        return self._by_name

    def lookup(self, name: str) -> Entity | None:
        return self._by_name.get(normalize_name(name))

    def get(self, entity_id: str) -> Entity | None:
        return self._by_id.get(entity_id)

    def replace_entity(self, entity: Entity) -> "KnowledgeBase":
        """Return a new KB with the entity of the same id swapped in place."""
        if entity.id not in self._by_id:
            raise KeyError(entity.id)
        ents = [entity if e.id == entity.id else e for e in self]
        return KnowledgeBase(ents, self.snapshot_time, self.skipped)


def load_kb(path: str | Path, snapshot_time: datetime | None = None) -> KnowledgeBase:
    """Read a JSON-lines entity dump.

    Malformed lines, invariant violations and duplicate ids or normalized
    names are skipped and counted in ``kb.skipped``; unreadable files raise
    ``OSError``.
    """
    entities: list[Entity] = []
    seen_names: set[str] = set()
    seen_ids: set[str] = set()
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                entity = Entity.from_record(json.loads(line))
            except (json.JSONDecodeError, ValidationError, TypeError, ValueError) as exc:
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                skipped += 1
                continue
            key = normalize_name(entity.name)
            if key in seen_names or entity.id in seen_ids:
                log.warning("%s:%d skipped: duplicate %r", path, lineno, key)
                skipped += 1
                continue
            seen_names.add(key)
            seen_ids.add(entity.id)
            entities.append(entity)
    return KnowledgeBase(entities, snapshot_time, skipped)


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in kb:
            fh.write(json.dumps(e.to_record(), ensure_ascii=False, sort_keys=True) + "\n")


@dataclass(eq=False)
class PropertyGraph:
    """Hub-and-spoke graph of one entity: the unit of classification.

    ``edge_labels`` maps an undirected edge ``(i, j)`` with ``i < j`` to the
    attribute name it carries.
    """

    adjacency: np.ndarray
    features: np.ndarray
    roles: tuple[str, ...]
    edge_labels: dict[tuple[int, int], str] = field(default_factory=dict)
    label: int = 0
    entity_id: str = ""

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=np.int8)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.roles = tuple(self.roles)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def f(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "PropertyGraph":
        eid = self.entity_id
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"graph {eid!r}: adjacency must be square")
        if not np.isin(a, (0, 1)).all():
            raise ValidationError(f"graph {eid!r}: adjacency must be binary")
        if not np.array_equal(a, a.T):
            raise ValidationError(f"graph {eid!r}: adjacency is not symmetric")
        if np.any(np.diag(a)):
            raise ValidationError(f"graph {eid!r}: adjacency has self-loops")
        if self.features.ndim != 2 or self.features.shape[0] != self.n:
            raise ValidationError(f"graph {eid!r}: feature rows must equal node count")
        if not np.isfinite(self.features).all():
            raise ValidationError(f"graph {eid!r}: non-finite features")
        if len(self.roles) != self.n or any(r not in ROLES for r in self.roles):
            raise ValidationError(f"graph {eid!r}: bad roles")
        if self.roles.count(CENTER) != 1 or self.roles.count(TOPIC) != 1:
            raise ValidationError(f"graph {eid!r}: need exactly one Center and one Topic node")
        deg = a.sum(axis=1)
        if any(deg[i] < 1 for i, r in enumerate(self.roles) if r == VALUE):
            raise ValidationError(f"graph {eid!r}: isolated Value node")
        for (i, j) in self.edge_labels:
            if not (0 <= i < j < self.n) or not a[i, j]:
                raise ValidationError(f"graph {eid!r}: edge label on non-edge {(i, j)}")
        if self.label not in (0, 1):
            raise ValidationError(f"graph {eid!r}: label must be 0 or 1")
        return self

    def __eq__(self, other) -> bool:
        if not isinstance(other, PropertyGraph):
            return NotImplemented
        return (
            self.entity_id == other.entity_id
            and self.label == other.label
            and self.roles == other.roles
            and self.edge_labels == other.edge_labels
            and self.adjacency.shape == other.adjacency.shape
            and np.array_equal(self.adjacency, other.adjacency)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
        )

    def to_record(self) -> dict:
        # edges and features are stored sparsely; json float repr round-trips exactly
        edges = [[int(i), int(j), self.edge_labels.get((int(i), int(j)))]
                 for i, j in zip(*np.nonzero(np.triu(self.adjacency)))]
        rows = [[[int(c), float(row[c])] for c in np.flatnonzero(row)] for row in self.features]
        return {
            "entity_id": self.entity_id,
            "label": int(self.label),
            "n": self.n,
            "roles": list(self.roles),
            "edges": edges,
            "features": rows,
        }

    @classmethod
    def from_record(cls, rec: Mapping, f: int) -> "PropertyGraph":
        n = rec["n"]
        a = np.zeros((n, n), dtype=np.int8)
        labels = {}
        for i, j, name in rec["edges"]:
            a[i, j] = a[j, i] = 1
            if name is not None:
                labels[(i, j)] = name
        x = np.zeros((n, f))
        for r, row in enumerate(rec["features"]):
            for c, v in row:
                x[r, c] = v
        return cls(a, x, tuple(rec["roles"]), labels, int(rec["label"]), rec["entity_id"])


def save_graphs(graphs: list[PropertyGraph], path: str | Path, f: int | None = None) -> None:
    """Write a graph store: a ``{"f", "version"}`` header line then one graph per line."""
    if f is None:
        f = graphs[0].f if graphs else 0
    for g in graphs:
        g.validate()
        if g.f != f:
            raise ValidationError(f"graph {g.entity_id!r}: feature dim {g.f} != store dim {f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"f": f, "version": GRAPH_STORE_VERSION}) + "\n")
        for g in graphs:
            fh.write(json.dumps(g.to_record(), ensure_ascii=False) + "\n")


def load_graphs(path: str | Path) -> list[PropertyGraph]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        return []
    header = json.loads(lines[0])
    if header.get("version") != GRAPH_STORE_VERSION or "f" not in header:
        raise ValidationError(f"{path}: unsupported graph store header {header!r}")
    return [PropertyGraph.from_record(json.loads(ln), header["f"]).validate() for ln in lines[1:]]


def read_graph_store_dim(path: str | Path) -> int:
    with open(path, encoding="utf-8") as fh:
        return int(json.loads(fh.readline())["f"])
