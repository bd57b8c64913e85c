"""Triple-level synchronization of stale entities against the encyclopedia."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .encyc import SourceError
from .ingest import edit_distance
from .kb import Entity, KnowledgeBase, Triple, normalize_predicate

log = logging.getLogger(__name__)

DEFAULT_PREDICATE_DIST = 2


class EntityNotFoundError(KeyError):
    pass


@dataclass
class UpdateReport:
    entity_id: str
    added: list[Triple] = field(default_factory=list)
    changed: list[tuple[Triple, Triple]] = field(default_factory=list)
    removed: list[Triple] = field(default_factory=list)
    skipped_reason: str | None = None

    @property
    def empty(self) -> bool:
        return not (self.added or self.changed or self.removed)

    def to_record(self) -> dict:
        def t(x: Triple):
            return [x.predicate, x.object]
        return {
            "entity_id": self.entity_id,
            "added": [t(x) for x in self.added],
            "changed": [[t(a), t(b)] for a, b in self.changed],
            "removed": [t(x) for x in self.removed],
            "skipped_reason": self.skipped_reason,
        }


def match_attributes(kb_triples: Iterable[Triple], fresh_triples: Iterable[Triple],
                     max_dist: int = DEFAULT_PREDICATE_DIST) -> list[tuple[str, str]]:
    """Greedily pair predicate names by smallest edit distance.

    Distances are taken between normalized predicates. The globally closest
    unmatched pair within ``max_dist`` is taken first; exact string matches
    win ties, then the unordered pair in lexicographic order, so swapping
    the two arguments yields the same pairing.
    """
    if max_dist < 0:
        raise ValueError("max_dist must be >= 0")
    kb_preds = sorted({t.predicate for t in kb_triples})
    fresh_preds = sorted({t.predicate for t in fresh_triples})
    cands = []
    for k in kb_preds:
        nk = normalize_predicate(k)
        for f in fresh_preds:
            nf = normalize_predicate(f)
            if abs(len(nk) - len(nf)) > max_dist:
                continue
            d = edit_distance(nk, nf)
            if d <= max_dist:
                lo, hi = sorted((nk, nf))
                cands.append(((d, k != f, lo, hi, *sorted((k, f))), k, f))
    cands.sort(key=lambda c: c[0])
    used_k: set[str] = set()
    used_f: set[str] = set()
    pairs = []
    for _, k, f in cands:
        if k not in used_k and f not in used_f:
            used_k.add(k)
            used_f.add(f)
            pairs.append((k, f))
    return pairs


def _by_predicate(triples: Iterable[Triple]) -> dict[str, set[str]]:
    out: dict[str, set[str]] = defaultdict(set)
    for t in triples:
        out[t.predicate].add(t.object)
    return out


def diff_entity(kb_entity: Entity, fresh_entity: Entity,
                max_dist: int = DEFAULT_PREDICATE_DIST) -> UpdateReport:
    """What must change in ``kb_entity`` for its triples to equal the fresh ones.

    Within a matched predicate pair, objects present on both sides are kept
    when the predicate string is identical; the remaining objects are paired
    in sorted order as changes, and leftovers become additions or removals.
    Unmatched predicates are added or removed wholesale.
    """
    subj = kb_entity.name
    kb = _by_predicate(kb_entity.triples)
    fresh = _by_predicate(fresh_entity.triples)
    report = UpdateReport(kb_entity.id)
    pairs = match_attributes(kb_entity.triples, fresh_entity.triples, max_dist)
    paired_k = {k for k, _ in pairs}
    paired_f = {f for _, f in pairs}

    for k, f in pairs:
        old, new = kb[k], fresh[f]
        if k == f:
            old_only, new_only = sorted(old - new), sorted(new - old)
        else:
            # renamed predicate: objects kept on both sides still change key
            common = sorted(old & new)
            report.changed.extend((Triple(subj, k, o), Triple(subj, f, o)) for o in common)
            old_only, new_only = sorted(old - new), sorted(new - old)
        for o_old, o_new in zip(old_only, new_only):
            report.changed.append((Triple(subj, k, o_old), Triple(subj, f, o_new)))
        report.removed.extend(Triple(subj, k, o) for o in old_only[len(new_only):])
        report.added.extend(Triple(subj, f, o) for o in new_only[len(old_only):])

    for k in sorted(kb.keys() - paired_k):
        report.removed.extend(Triple(subj, k, o) for o in sorted(kb[k]))
    for f in sorted(fresh.keys() - paired_f):
        report.added.extend(Triple(subj, f, o) for o in sorted(fresh[f]))
    return report


def apply_update(kb: KnowledgeBase, report: UpdateReport, dry_run: bool = False) -> KnowledgeBase:
    """Apply a report to its entity; returns ``kb`` itself when dry-running or empty."""
    entity = kb.get(report.entity_id)
    if entity is None:
        raise EntityNotFoundError(report.entity_id)
    if dry_run or report.empty:
        return kb
    drop = {t.key for t in report.removed} | {old.key for old, _ in report.changed}
    kept = [t for t in entity.triples if t.key not in drop]
    have = {t.key for t in kept}
    for t in [new for _, new in report.changed] + report.added:
        if t.key not in have:
            have.add(t.key)
            kept.append(Triple(entity.name, t.predicate, t.object))
    return kb.replace_entity(entity.with_triples(kept))


@dataclass(frozen=True)
class SyncConfig:
    max_dist: int = DEFAULT_PREDICATE_DIST
    dry_run: bool = False


def sync_pipeline(kb: KnowledgeBase, predictions: Sequence[tuple[str, int]], source,
                  config: SyncConfig = SyncConfig()) -> list[UpdateReport]:
    """Diff every entity predicted stale (label 1) against a fresh fetch.

    Reports follow prediction order; fetch failures yield a report with
    ``skipped_reason`` set instead of raising.
    """
    reports = []
    for entity_id, label in predictions:
        if int(label) != 1:
            continue
        entity = kb.get(entity_id)
        if entity is None:
            reports.append(UpdateReport(entity_id, skipped_reason="not in knowledge base"))
            continue
        try:
            fresh = source.fetch_entity(entity.name)
        except SourceError as exc:
            reports.append(UpdateReport(entity_id, skipped_reason=f"fetch failed: {exc}"))
            continue
        if fresh is None:
            reports.append(UpdateReport(entity_id, skipped_reason="not found at source"))
            continue
        reports.append(diff_entity(entity, fresh, config.max_dist))
    return reports


def apply_reports(kb: KnowledgeBase, reports: Iterable[UpdateReport], dry_run: bool = False) -> KnowledgeBase:
    """Apply reports serially in order, skipping ones marked as skipped."""
    for r in reports:
        if r.skipped_reason is None:
            kb = apply_update(kb, r, dry_run)
    return kb


def save_reports(reports: Iterable[UpdateReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_record(), ensure_ascii=False) + "\n")
