"""Deterministic synthetic worlds for the bundled fixture and experiments.

A world has a stale knowledge base, a fresher encyclopedia dump with
revision timestamps, and a user query log that mentions (sometimes
misspelled) entity names. Run as a module to regenerate the fixture::

    python -m kbfresh.synthetic --out src/kbfresh/data/fixture
"""

from __future__ import annotations

import argparse
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .encyc import LabelWindow, format_timestamp
from .graphs import GraphBuildConfig, build_graph
from .ingest import edit_distance
from .kb import Entity, PropertyGraph, Triple
from .topics import Vocabulary

FIXTURE_DIR = Path(__file__).parent / "data" / "fixture"

THEMES = {
    "music": "album band singer guitar concert tour song record label chart lyrics studio "
             "melody drummer vocalist orchestra festival single acoustic rhythm",
    "sport": "team league match goal coach season player stadium trophy championship "
             "striker keeper tournament referee transfer fixture squad injury derby",
    "science": "theory experiment laboratory physics molecule research journal particle "
               "quantum telescope hypothesis genome protein enzyme reactor neuron",
    "business": "company market revenue shares investor startup product merger board "
                "profit brand retail quarterly acquisition dividend customer supply",
    "geography": "river mountain valley island coast region lake climate border plateau "
                 "delta glacier peninsula desert forest harbour basin canyon",
}
FILLER = "known widely famous notable major early modern local national popular".split()

PREDICATES = {
    "music": ["genre", "record label", "members", "active years", "origin"],
    "sport": ["coach", "league", "home stadium", "captain", "founded"],
    "science": ["field", "institution", "known for", "award", "doctoral advisor"],
    "business": ["ceo", "headquarters", "revenue", "industry", "owner"],
    "geography": ["country", "area", "population", "elevation", "capital"],
}
COMMON_PREDICATES = ["english name", "nickname", "official website", "birth", "birthday", "inception"]
VOLATILE = {"members", "coach", "captain", "ceo", "revenue", "population", "league", "owner"}
VOLATILE_THEMES = {"sport", "business"}

SYLLABLES = ("ka ro vel in th ar mo zu ne li sa qu or tan bel fi dra go nu pe "
             "sh al ver do mi ra ko lu tes gar wen hal bri cor dun").split()

TEMPLATES = [
    "who is the {pred} of {name}",
    "what is the {pred} of {name}",
    "tell me about {name}",
    "show {name} {pred} please",
    "latest news about {name} today",
    "{name} {pred}",
    "where can I find {name} information",
]
NOISE_LINES = ["hi", "ok thanks", "hello there", "??", "what is this", "more", "the and of"]

WINDOW = LabelWindow(datetime(2023, 7, 1, tzinfo=timezone.utc), datetime(2023, 8, 1, tzinfo=timezone.utc))


@dataclass
class World:
    kb: list[Entity]
    dump: list[dict]
    log: list[dict]
    window: LabelWindow = WINDOW
    themes: dict[str, str] = field(default_factory=dict)
    labels: dict[str, int] = field(default_factory=dict)


def _pseudo_word(rng: np.random.Generator, n_syll: int) -> str:
    return "".join(rng.choice(SYLLABLES, size=n_syll))


def _names(rng: np.random.Generator, n: int) -> list[str]:
    out: list[str] = []
    while len(out) < n:
        name = f"{_pseudo_word(rng, 3).capitalize()} {_pseudo_word(rng, 2).capitalize()}"
        low = name.lower()
        if len(low) < 9 or any(edit_distance(low, o.lower()) < 5 for o in out):
            continue
        out.append(name)
    return out


def _typo(rng: np.random.Generator, text: str) -> str:
    chars = [i for i, c in enumerate(text) if c.isalpha()]
    i = int(rng.choice(chars))
    repl = "aeiou" if text[i].lower() not in "aeiou" else "bdkmt"
    return text[:i] + str(rng.choice(list(repl))) + text[i + 1:]


def _value(rng: np.random.Generator, pred: str, theme: str) -> str:
    if pred in ("revenue", "population", "area", "elevation", "members"):
        return str(int(rng.integers(10, 99999)))
    if pred in ("birthday", "birth", "inception", "founded", "active years"):
        return str(int(rng.integers(1900, 2020)))
    words = THEMES[theme].split()
    return f"{_pseudo_word(rng, 2)} {rng.choice(words)}"


def make_world(n_entities: int = 160, seed: int = 7, n_log: int = 900,
               missing_rate: float = 0.04) -> World:
    """Generate a world; the same arguments always give the same world."""
    rng = np.random.default_rng(seed)
    theme_names = sorted(THEMES)
    names = _names(rng, n_entities)
    kb: list[Entity] = []
    dump: list[dict] = []
    themes: dict[str, str] = {}
    labels: dict[str, int] = {}
    window = WINDOW
    span = (window.end - window.start).total_seconds()

    for i, name in enumerate(names):
        eid = f"Q{1000 + i}"
        theme = theme_names[i % len(theme_names)]
        themes[eid] = theme
        words = THEMES[theme].split()
        summary = " ".join(list(rng.choice(words, size=10)) + list(rng.choice(FILLER, size=3)))
        preds = list(rng.choice(PREDICATES[theme], size=int(rng.integers(2, 5)), replace=False))
        preds += list(rng.choice(COMMON_PREDICATES, size=int(rng.integers(0, 3)), replace=False))
        triples = [Triple(name, p, _value(rng, p, theme)) for p in sorted(preds)]
        kb.append(Entity(eid, name, summary, tuple(triples)))

        volatile = sum(p in VOLATILE for p in preds)
        p_change = 0.15 + 0.45 * (theme in VOLATILE_THEMES) + 0.15 * min(volatile, 2)
        changed = bool(rng.random() < p_change)
        labels[eid] = int(changed)

        fresh = list(triples)
        revisions = []
        if changed:
            j = int(rng.integers(len(fresh)))
            t = fresh[j]
            fresh[j] = Triple(name, t.predicate, _value(rng, t.predicate, theme))
            if rng.random() < 0.5:
                extra = [p for p in PREDICATES[theme] + COMMON_PREDICATES if p not in preds]
                p = str(rng.choice(extra))
                fresh.append(Triple(name, p, _value(rng, p, theme)))
            if rng.random() < 0.2 and len(fresh) > 2:
                fresh.pop(int(rng.integers(len(fresh))))
            for _ in range(int(rng.integers(1, 4))):
                revisions.append(window.start + timedelta(seconds=float(rng.uniform(1, span))))
        for _ in range(int(rng.integers(0, 3))):
            before = window.start - timedelta(days=float(rng.uniform(1, 300)))
            revisions.append(before)
        revisions = sorted({r.replace(microsecond=0) for r in revisions})
        if changed and not any(window.start < r <= window.end for r in revisions):
            revisions.append(window.end)
        rng.shuffle(revisions)
        if rng.random() >= missing_rate:
            dump.append({
                "id": eid, "name": name, "summary": summary,
                "triples": [[t.predicate, t.object] for t in fresh],
                "revisions": [format_timestamp(r) for r in revisions],
            })

    # Zipf-like popularity for the query log
    weights = 1.0 / np.arange(1, n_entities + 1) ** 0.6
    weights /= weights.sum()
    order = rng.permutation(n_entities)
    log: list[dict] = []
    t0 = window.end
    for k in range(n_log):
        ts = format_timestamp(t0 + timedelta(minutes=7 * k))
        if rng.random() < 0.08:
            log.append({"text": str(rng.choice(NOISE_LINES)), "ts": ts})
            continue
        ent = kb[int(order[rng.choice(n_entities, p=weights)])]
        pred = ent.triples[int(rng.integers(len(ent.triples)))].predicate
        name = ent.name.lower() if rng.random() < 0.5 else ent.name
        if rng.random() < 0.1:
            name = _typo(rng, name)
        log.append({"text": str(rng.choice(TEMPLATES)).format(name=name, pred=pred), "ts": ts})
    return World(kb, dump, log, window, themes, labels)


def write_world(world: World, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "kb.jsonl", "w", encoding="utf-8") as fh:
        for e in world.kb:
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
    with open(out / "dump.jsonl", "w", encoding="utf-8") as fh:
        for rec in world.dump:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(out / "log.jsonl", "w", encoding="utf-8") as fh:
        for rec in world.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out / "run.cfg").write_text(
        "# bundled synthetic fixture; paths are relative to this file\n"
        "kb = kb.jsonl\n"
        "log = log.jsonl\n"
        "source = dump.jsonl\n"
        f"window = {world.window}\n"
        "seed = 0\n"
        "k = auto\n"
        "k_min = 2\n"
        "k_max = 10\n"
        "n_max = 4\n"
        "max_dist = 2\n"
        "epochs = 60\n"
        "learning_rate = 0.01\n"
        "threshold = 0.5\n"
        "parallelism = 1\n",
        encoding="utf-8",
    )


# experiment datasets ---------------------------------------------------------

ABLATION_NOISE_PREDICATES = ["english name", "nickname", "birth", "inception", "official website",
                             "country", "genre", "field", "industry", "origin"]


def ablation_entities(n: int, seed: int, n_topics: int = 5, topic_agreement: float = 0.8,
                      flag_agreement: float = 0.9):
    """Entities whose change label depends on the topic and on two attribute flags.

    The topic group (topics below ``n_topics // 2`` vs the rest) agrees with
    the label with probability ``topic_agreement``. Independently, the XOR of
    two attribute flags ("status: active", "listing: public") agrees with the
    label with probability ``flag_agreement``. A linear model over pooled
    features can use the topic but not the XOR.
    """
    rng = np.random.default_rng(seed)
    volatile_topics = list(range(n_topics // 2))
    stable_topics = list(range(n_topics // 2, n_topics))
    out = []
    for i in range(n):
        y = int(rng.integers(2))
        group_matches = rng.random() < topic_agreement
        volatile = (y == 1) == group_matches
        topic = int(rng.choice(volatile_topics if volatile else stable_topics))
        xor = y if rng.random() < flag_agreement else 1 - y
        a = int(rng.integers(2))
        b = a ^ xor
        name = f"entity {i}"
        triples = []
        triples.append(Triple(name, "status", "active" if a else "dormant"))
        triples.append(Triple(name, "listing", "public" if b else "private"))
        for p in rng.choice(ABLATION_NOISE_PREDICATES, size=int(rng.integers(1, 4)), replace=False):
            triples.append(Triple(name, str(p), f"value{int(rng.integers(4))}"))
        summary = " ".join(f"word{int(w)}" for w in rng.integers(0, 6, size=8))
        out.append((Entity(f"E{i}", name, summary, tuple(triples)), topic, y))
    return out


def ablation_vocabulary(n_topics: int = 5) -> Vocabulary:
    terms = sorted({f"word{i}" for i in range(6)} | {f"value{i}" for i in range(4)}
                   | {"status", "active", "dormant", "listing", "public", "private"}
                   | {w for p in ABLATION_NOISE_PREDICATES for w in p.split()})
    return Vocabulary(terms, np.ones(len(terms))).with_topics(n_topics)


def ablation_graphs(n: int, seed: int, include_topic: bool = True, **kw) -> list[PropertyGraph]:
    n_topics = kw.pop("n_topics", 5)
    config = GraphBuildConfig(ablation_vocabulary(n_topics), include_topic_node=include_topic)
    return [build_graph(e, t, y, config)
            for e, t, y in ablation_entities(n, seed, n_topics=n_topics, **kw)]


def separable_graphs(n: int = 20, f: int = 6, seed: int = 0) -> list[PropertyGraph]:
    """Small star graphs whose class is set by the sign of one feature column."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % 2
        n_nodes = int(rng.integers(2, 6))
        a = np.zeros((n_nodes, n_nodes), dtype=np.int8)
        a[0, 1:] = a[1:, 0] = 1
        x = rng.uniform(0, 0.3, size=(n_nodes, f))
        x[:, 0] += 1.0 if y else 0.0
        roles = ("Center", "Topic") + ("Value",) * (n_nodes - 2)
        out.append(PropertyGraph(a, x, roles, {}, y, f"S{i}").validate())
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description="write a synthetic kbfresh fixture")
    ap.add_argument("--out", default=str(FIXTURE_DIR))
    ap.add_argument("--entities", type=int, default=160)
    ap.add_argument("--log-lines", type=int, default=900)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    write_world(make_world(args.entities, args.seed, args.log_lines), args.out)


if __name__ == "__main__":
    main()
