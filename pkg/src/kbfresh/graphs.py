"""Per-entity property graphs: entity hub, attribute spokes, topic node."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .encyc import LabelWindow, SourceError, label_entity, parallel_map
from .ingest import SeedEntity
from .kb import CENTER, TOPIC, VALUE, Entity, PropertyGraph
from .topics import Vocabulary, topic_token

log = logging.getLogger(__name__)

TOPIC_EDGE = "topic"


class DegenerateInputError(ValueError):
    pass


class BuildAbortedError(RuntimeError):
    pass


@dataclass(frozen=True)
class GraphBuildConfig:
    vocabulary: Vocabulary
    include_topic_node: bool = True
    max_failure_rate: float = 0.2
    parallelism: int = 1

    def __post_init__(self):
        if not len(self.vocabulary):
            raise ValueError("vocabulary must be non-empty")


def build_graph(entity: Entity, topic: int, label: int, config: GraphBuildConfig) -> PropertyGraph:
    """Star graph for one entity.

    Node order is Center, Topic, then one Value node per distinct
    (predicate, object) sorted. Value features embed ``"predicate: object"``
    so attribute names reach the model. With ``include_topic_node`` off the
    Topic node is kept but carries a zero feature row.
    """
    if not entity.summary.strip() and not entity.triples:
        raise DegenerateInputError(f"entity {entity.id!r} has neither summary nor triples")
    vocab = config.vocabulary
    pairs = sorted({(t.predicate, t.object) for t in entity.triples})
    n = 2 + len(pairs)

    x = np.zeros((n, vocab.dim))
    x[0] = vocab.embed(entity.summary)
    if config.include_topic_node:
        tok = topic_token(topic)
        if tok not in vocab.index:
            raise ValueError(f"topic {topic} has no reserved token in the vocabulary")
        x[1] = vocab.embed(tok)
    for i, (p, o) in enumerate(pairs, start=2):
        x[i] = vocab.embed(f"{p}: {o}")

    a = np.zeros((n, n), dtype=np.int8)
    a[0, 1:] = a[1:, 0] = 1
    labels = {(0, 1): TOPIC_EDGE}
    labels.update({(0, i): p for i, (p, _) in enumerate(pairs, start=2)})
    roles = (CENTER, TOPIC) + (VALUE,) * len(pairs)
    return PropertyGraph(a, x, roles, labels, int(label), entity.id).validate()


def attribute_histogram(graphs: Iterable[PropertyGraph]) -> list[tuple[str, int]]:
    """Number of graphs carrying each attribute edge label, most common first."""
    counts: Counter = Counter()
    for g in graphs:
        counts.update({name for (i, j), name in g.edge_labels.items()
                       if TOPIC not in (g.roles[i], g.roles[j])})
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def build_dataset(seeds: Sequence[SeedEntity], source, topics: dict[str, int],
                  windows: LabelWindow | Sequence[LabelWindow], config: GraphBuildConfig,
                  ) -> list[PropertyGraph]:
    """One labeled graph per (seed, window); unfetchable seeds are skipped.

    Raises ``BuildAbortedError`` when the skipped fraction exceeds
    ``config.max_failure_rate``.
    """
    if isinstance(windows, LabelWindow):
        windows = [windows]
    missing = [s.entity_id for s in seeds if s.entity_id not in topics]
    if missing:
        raise KeyError(f"no topic assignment for {missing[:5]}")

    def work(seed: SeedEntity):
        try:
            ent = source.fetch_entity(seed.name)
            if ent is None:
                return None, "not found"
            out = []
            for w in windows:
                label = label_entity(source.fetch_revisions(seed.name, w), w)
                ent_as_seed = Entity(seed.entity_id, ent.name, ent.summary, ent.triples)
                out.append(build_graph(ent_as_seed, topics[seed.entity_id], label, config))
            return out, None
        except (SourceError, DegenerateInputError) as exc:
            return None, str(exc)

    graphs: list[PropertyGraph] = []
    failures = 0
    for seed, (built, err) in zip(seeds, parallel_map(work, list(seeds), config.parallelism)):
        if built is None:
            failures += 1
            log.warning("skipping seed %s (%s): %s", seed.entity_id, seed.name, err)
        else:
            graphs.extend(built)
    if seeds and failures / len(seeds) > config.max_failure_rate:
        raise BuildAbortedError(
            f"{failures}/{len(seeds)} seeds failed, above the {config.max_failure_rate:.0%} limit")
    return graphs
