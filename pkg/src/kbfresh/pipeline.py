"""File-based pipeline stages with a hash manifest.

Each stage reads and writes files only, then appends one JSON line to the
manifest: stage name, input and output SHA-256 hashes, a hash of the
stage's configuration and the wall time. ``run_all`` can resume by
skipping stages whose manifest entry still matches.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import graphs as gb
from . import ingest, metrics, predictor, sync, topics
from .encyc import LabelWindow, open_source
from .kb import load_graphs, load_kb, save_graphs, save_kb

log = logging.getLogger(__name__)


class DependencyError(RuntimeError):
    """A stage input is missing; usually an earlier stage has not run."""


class DataError(RuntimeError):
    """Inputs exist but cannot be used."""


PRODUCERS = {
    "seeds": "extract-seeds",
    "topics": "topics",
    "vocab": "topics",
    "sse": "topics",
    "graphs": "build-graphs",
    "model": "train",
    "curves": "train",
    "preds": "predict",
    "metrics": "eval",
    "kl": "eval-kl",
}


@dataclass
class RunConfig:
    kb: str | None = None
    log: str | None = None
    source: str | None = None
    seed: int = 0
    n_max: int = 4
    max_dist: str = "2"  # integer or "auto" (scaled by candidate length)
    k: str = str(topics.DEFAULT_K)  # integer or "auto"
    k_min: int = topics.DEFAULT_K_RANGE[0]
    k_max: int = topics.DEFAULT_K_RANGE[1]
    window: str = "2023-07-01..2023-08-01"
    epochs: int = 25
    learning_rate: float = 0.01
    threshold: float = 0.5
    parallelism: int = 1
    include_topic: bool = True
    predicate_max_dist: int = sync.DEFAULT_PREDICATE_DIST
    max_failure_rate: float = 0.2
    dry_run: bool = False

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def updated(self, values: dict) -> "RunConfig":
        """Copy with string or typed values coerced to each field's type."""
        kw = {}
        for f in fields(self):
            if f.name not in values or values[f.name] is None:
                continue
            v = values[f.name]
            default = getattr(RunConfig, f.name, None)
            if isinstance(default, bool):
                v = v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            else:
                v = str(v)
            kw[f.name] = v
        return replace(self, **kw)

    def seed_config(self) -> ingest.SeedConfig:
        md = None if self.max_dist == "auto" else int(self.max_dist)
        return ingest.SeedConfig(n_max=self.n_max, max_dist=md)

    def train_config(self) -> predictor.TrainConfig:
        return predictor.TrainConfig(self.learning_rate, self.epochs, self.seed, threshold=self.threshold)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment.

    Relative ``kb``/``log``/``source`` paths are resolved against the file's
    directory.
    """
    path = Path(path)
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RunConfig.keys():
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    for key in ("kb", "log", "source"):
        v = out.get(key)
        if v and not v.startswith(("http://", "https://")) and not Path(v).is_absolute():
            out[key] = str((path.parent / v).resolve())
    return out


# manifest ------------------------------------------------------------------

def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(values: dict) -> str:
    return hashlib.sha256(json.dumps(values, sort_keys=True, default=str).encode()).hexdigest()


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def _hash_inputs(inputs: dict[str, str]) -> dict[str, str | None]:
    out = {}
    for name, p in inputs.items():
        if p is None:
            continue
        if str(p).startswith(("http://", "https://")):
            out[name] = p
        else:
            out[name] = file_hash(p)
    return out


@dataclass
class Stage:
    name: str
    inputs: dict[str, str | None]
    outputs: dict[str, str]
    config: dict
    fn: Callable[[], dict | None]


def check_inputs(stage: Stage) -> None:
    for role, p in stage.inputs.items():
        if p is None:
            raise DependencyError(f"{stage.name}: no path given for required input {role!r}")
        if str(p).startswith(("http://", "https://")):
            continue
        if not Path(p).exists():
            hint = f" (run `{PRODUCERS[role]}` first)" if role in PRODUCERS else ""
            raise DependencyError(f"{stage.name}: missing input {role} at {p}{hint}")


def run_stage(stage: Stage, manifest: str | Path, resume: bool = False) -> dict:
    """Run a stage and append its manifest entry; returns the entry."""
    check_inputs(stage)
    in_hashes = _hash_inputs(stage.inputs)
    chash = config_hash(stage.config)
    if resume:
        for prev in reversed(read_manifest(manifest)):
            if prev["stage"] != stage.name:
                continue
            outs_ok = all(Path(p).exists() and file_hash(p) == prev["outputs"].get(role)
                          for role, p in stage.outputs.items())
            if prev["inputs"] == in_hashes and prev["config_hash"] == chash and outs_ok:
                log.info("%s: up to date, skipped", stage.name)
                return {**prev, "skipped": True}
            break
    t0 = time.perf_counter()
    info = stage.fn() or {}
    entry = {
        "stage": stage.name,
        "inputs": in_hashes,
        "config_hash": chash,
        "outputs": {role: file_hash(p) for role, p in stage.outputs.items()},
        "wall_time": round(time.perf_counter() - t0, 4),
        "info": info,
    }
    Path(manifest).parent.mkdir(parents=True, exist_ok=True)
    with open(manifest, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return entry


# stage bodies ----------------------------------------------------------------

def stage_extract_seeds(log_path, kb_path, out, cfg: RunConfig) -> Stage:
    def fn():
        kb = load_kb(kb_path)
        seeds = ingest.extract_seeds(ingest.read_log(log_path), kb, cfg.seed_config())
        ingest.save_seeds(seeds, out)
        return {"seeds": len(seeds), "kb_skipped": kb.skipped}
    return Stage("extract-seeds", {"log": log_path, "kb": kb_path}, {"seeds": out},
                 {"n_max": cfg.n_max, "max_dist": cfg.max_dist}, fn)


def default_vocab_path(topics_path: str | Path) -> Path:
    p = Path(topics_path)
    return p.with_name(p.stem + ".vocab.json")


def stage_topics(kb_path, out, sse_csv, cfg: RunConfig, vocab_out=None) -> Stage:
    vocab_out = vocab_out or default_vocab_path(out)

    def fn():
        kb = load_kb(kb_path)
        ents = sorted(kb, key=lambda e: e.id)
        try:
            emb, vocab = topics.embed_corpus([(e.id, e.summary) for e in ents])
        except (topics.EmptyVocabularyError, ValueError) as exc:
            raise DataError(f"topics: {exc}") from None
        ids = [e.id for e in ents]
        if cfg.k == "auto":
            lo = max(1, cfg.k_min)
            hi = min(cfg.k_max, len(np.unique(emb, axis=0)))
            k, series = topics.choose_k(emb, (lo, hi), cfg.seed, ids)
        else:
            k = int(cfg.k)
            series = topics.sse_series(emb, (k, k), cfg.seed, ids)
        model = topics.kmeans(emb, k, seed=cfg.seed, ids=ids)
        topics.save_topics(model.assignments, out)
        topics.save_sse_csv(series, sse_csv)
        vocab.with_topics(k).save(vocab_out)
        return {"k": k, "entities": len(ids), "vocabulary": len(vocab)}
    return Stage("topics", {"kb": kb_path}, {"topics": out, "sse": sse_csv, "vocab": str(vocab_out)},
                 {"k": cfg.k, "k_min": cfg.k_min, "k_max": cfg.k_max, "seed": cfg.seed}, fn)


def stage_build_graphs(seeds_path, source, topics_path, out, cfg: RunConfig, vocab_path=None) -> Stage:
    vocab_path = str(vocab_path or default_vocab_path(topics_path))

    def fn():
        seeds = ingest.load_seeds(seeds_path)
        assignments = topics.load_topics(topics_path)
        vocab = topics.Vocabulary.load(vocab_path)
        bc = gb.GraphBuildConfig(vocab, cfg.include_topic, cfg.max_failure_rate, cfg.parallelism)
        try:
            graphs = gb.build_dataset(seeds, open_source(source), assignments,
                                      LabelWindow.parse(cfg.window), bc)
        except (gb.BuildAbortedError, KeyError) as exc:
            raise DataError(f"build-graphs: {exc}") from None
        save_graphs(graphs, out, f=vocab.dim)
        return {"graphs": len(graphs), "positives": sum(g.label for g in graphs),
                "skipped": len(seeds) - len(graphs)}
    inputs = {"seeds": seeds_path, "source": source, "topics": topics_path, "vocab": vocab_path}
    return Stage("build-graphs", inputs, {"graphs": out},
                 {"window": cfg.window, "include_topic": cfg.include_topic,
                  "max_failure_rate": cfg.max_failure_rate}, fn)


def stage_train(graphs_path, out, curves_path, cfg: RunConfig, baseline: bool = False) -> Stage:
    def fn():
        graphs = load_graphs(graphs_path)
        fit = predictor.baseline_logistic if baseline else predictor.train
        try:
            result = fit(graphs, cfg.train_config())
        except predictor.ConfigurationError as exc:
            raise DataError(f"train: {exc}") from None
        predictor.save_model(result, out, seed=cfg.seed)
        predictor.save_curves(result.curves, curves_path)
        last = result.curves[-1] if result.curves else {}
        return {"model": "logistic" if baseline else "gcn", "graphs": len(graphs),
                "final_train_acc": last.get("train_acc")}
    name = "train-baseline" if baseline else "train"
    return Stage(name, {"graphs": graphs_path}, {"model": out, "curves": curves_path},
                 {"epochs": cfg.epochs, "learning_rate": cfg.learning_rate, "seed": cfg.seed,
                  "threshold": cfg.threshold, "baseline": baseline}, fn)


def stage_predict(graphs_path, model_path, out, cfg: RunConfig, name: str = "predict") -> Stage:
    def fn():
        graphs = load_graphs(graphs_path)
        params, doc = predictor.load_model(model_path)
        threshold = doc.get("threshold", cfg.threshold)
        split_of = {}
        if "split" in doc and sum(len(v) for v in doc["split"].values()) == len(graphs):
            split_of = {i: part for part, idx in doc["split"].items() for i in idx}
        with open(out, "w", encoding="utf-8") as fh:
            for i, g in enumerate(graphs):
                label, score = predictor.predict(g, params, threshold)
                fh.write(json.dumps({"entity_id": g.entity_id, "score": score, "label": label,
                                     "split": split_of.get(i)}) + "\n")
        return {"predictions": len(graphs)}
    return Stage(name, {"graphs": graphs_path, "model": model_path}, {"preds": out},
                 {"threshold": cfg.threshold}, fn)


def load_preds(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(ln) for ln in fh if ln.strip()]


def evaluate_predictions(preds: list[dict], graphs, split: str = "test", threshold: float = 0.5) -> dict:
    if len(preds) != len(graphs):
        raise DataError(f"eval: {len(preds)} predictions for {len(graphs)} graphs")
    rows = []
    for p, g in zip(preds, graphs):
        if p["entity_id"] != g.entity_id:
            raise DataError(f"eval: prediction for {p['entity_id']} lines up with graph {g.entity_id}")
        rows.append((p, g))
    if split != "all" and any(p.get("split") for p, _ in rows):
        rows = [(p, g) for p, g in rows if p.get("split") == split]
    if not rows:
        raise DataError(f"eval: no predictions in split {split!r}")
    out = metrics.classification_metrics([p["score"] for p, _ in rows], [g.label for _, g in rows],
                                         threshold)
    out["n"] = len(rows)
    out["split"] = split
    return out


def _merge_json(path, values: dict) -> None:
    p = Path(path)
    doc = json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}
    doc.update(values)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def stage_eval(preds_path, graphs_path, out, cfg: RunConfig, split: str = "test",
               name: str = "eval", kl_path=None) -> Stage:
    """Score predictions; KL keys come from ``kl_path`` or stay null."""
    def fn():
        res = evaluate_predictions(load_preds(preds_path), load_graphs(graphs_path), split, cfg.threshold)
        doc = {k: None for k in metrics.METRIC_KEYS}
        if kl_path is not None:
            doc.update(json.loads(Path(kl_path).read_text(encoding="utf-8")))
        doc.update(res)
        Path(out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return {"n": res["n"]}
    inputs = {"preds": preds_path, "graphs": graphs_path}
    if kl_path is not None:
        inputs["kl"] = kl_path
    return Stage(name, inputs, {"metrics": out}, {"split": split, "threshold": cfg.threshold}, fn)


def kl_from_files(seeds_path, preds_path, topics_path) -> dict:
    assignments = topics.load_topics(topics_path)
    seeds = ingest.load_seeds(seeds_path)
    stale = {}
    for p in load_preds(preds_path):
        stale[p["entity_id"]] = max(stale.get(p["entity_id"], 0), int(p["label"]))
    P = metrics.topic_distribution(assignments[s.entity_id] for s in seeds if s.entity_id in assignments)
    Q = metrics.topic_distribution(assignments[e] for e, lab in stale.items() if lab and e in assignments)
    return metrics.kl_report(P, Q)


def stage_eval_kl(seeds_path, preds_path, topics_path, out, merge: bool = True) -> Stage:
    """KL between queried (P) and predicted-stale (Q) topic distributions.

    With ``merge`` the keys are folded into an existing metrics file,
    otherwise ``out`` is overwritten with just the KL keys.
    """
    def fn():
        res = kl_from_files(seeds_path, preds_path, topics_path)
        if merge:
            _merge_json(out, res)
        else:
            Path(out).write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return res
    return Stage("eval-kl", {"p": seeds_path, "q": preds_path, "topics": topics_path},
                 {"metrics": out}, {}, fn)


def stage_sync(kb_path, preds_path, source, report_path, out, cfg: RunConfig) -> Stage:
    def fn():
        kb = load_kb(kb_path)
        labels: dict[str, int] = {}
        for p in load_preds(preds_path):
            labels[p["entity_id"]] = max(labels.get(p["entity_id"], 0), int(p["label"]))
        reports = sync.sync_pipeline(kb, list(labels.items()), open_source(source),
                                     sync.SyncConfig(cfg.predicate_max_dist, cfg.dry_run))
        sync.save_reports(reports, report_path)
        updated = sync.apply_reports(kb, reports, dry_run=cfg.dry_run)
        save_kb(updated, out)
        return {"stale": sum(labels.values()), "reports": len(reports),
                "skipped": sum(r.skipped_reason is not None for r in reports),
                "changed_entities": sum(not r.empty for r in reports), "dry_run": cfg.dry_run}
    return Stage("sync", {"kb": kb_path, "preds": preds_path, "source": source},
                 {"report": report_path, "kb_updated": out},
                 {"predicate_max_dist": cfg.predicate_max_dist, "dry_run": cfg.dry_run}, fn)


# run-all --------------------------------------------------------------------

ARTIFACTS = {
    "seeds": "seeds.jsonl",
    "topics": "topics.jsonl",
    "sse": "sse.csv",
    "vocab": "topics.vocab.json",
    "graphs": "graphs.jsonl",
    "model": "model.json",
    "curves": "curves.csv",
    "baseline_model": "model_logistic.json",
    "baseline_curves": "curves_logistic.csv",
    "preds": "preds.jsonl",
    "baseline_preds": "preds_logistic.jsonl",
    "kl": "kl.json",
    "metrics": "metrics.json",
    "baseline_metrics": "metrics_logistic.json",
    "sync_report": "sync_report.jsonl",
    "kb_updated": "kb_updated.jsonl",
    "manifest": "manifest.jsonl",
}


def run_all(cfg: RunConfig, workdir: str | Path, resume: bool = False, figures: bool = True) -> list[dict]:
    """Every stage in order, outputs under ``workdir``; returns manifest entries."""
    from .report import write_report

    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    a = {k: str(wd / v) for k, v in ARTIFACTS.items()}
    for key in ("kb", "log", "source"):
        if not getattr(cfg, key):
            raise DependencyError(f"run-all: config key {key!r} is required")
    stages = [
        stage_extract_seeds(cfg.log, cfg.kb, a["seeds"], cfg),
        stage_topics(cfg.kb, a["topics"], a["sse"], cfg, a["vocab"]),
        stage_build_graphs(a["seeds"], cfg.source, a["topics"], a["graphs"], cfg, a["vocab"]),
        stage_train(a["graphs"], a["model"], a["curves"], cfg),
        stage_train(a["graphs"], a["baseline_model"], a["baseline_curves"], cfg, baseline=True),
        stage_predict(a["graphs"], a["model"], a["preds"], cfg),
        stage_predict(a["graphs"], a["baseline_model"], a["baseline_preds"], cfg, "predict-baseline"),
        stage_eval_kl(a["seeds"], a["preds"], a["topics"], a["kl"], merge=False),
        stage_eval(a["preds"], a["graphs"], a["metrics"], cfg, kl_path=a["kl"]),
        stage_eval(a["baseline_preds"], a["graphs"], a["baseline_metrics"], cfg, name="eval-baseline"),
        stage_sync(cfg.kb, a["preds"], cfg.source, a["sync_report"], a["kb_updated"], cfg),
    ]
    entries = [run_stage(s, a["manifest"], resume) for s in stages]
    write_report(wd, a["manifest"], a["metrics"], figures=figures)
    return entries


