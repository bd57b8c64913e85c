"""Unsupervised topic assignment over entity summaries.

Summaries are embedded as L2-normalized TF-IDF vectors, clustered with
k-means (k-means++ init, Lloyd or mini-batch updates), and k is picked as
the point of maximum curvature of the SSE-vs-k curve.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TOKEN_RE = re.compile(r"\w+", re.UNICODE)

MAX_ITER = 300
TOL = 1e-6
DEFAULT_K = 14
DEFAULT_K_RANGE = (2, 20)


class EmptyVocabularyError(ValueError):
    pass


def text_tokens(text: str) -> list[str]:
    return TOKEN_RE.findall(text.lower())


def topic_token(topic: int) -> str:
    return f"topic_{topic}"


@dataclass
class Vocabulary:
    """Ordered terms with their IDF weights.

    Reserved ``topic_<id>`` terms sit after the corpus terms with IDF 1, so
    each topic owns one embedding axis that corpus text never touches.
    """

    terms: list[str]
    idf: np.ndarray
    n_reserved: int = 0
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.idf = np.asarray(self.idf, dtype=np.float64)
        self.index = {t: i for i, t in enumerate(self.terms)}

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return len(self.terms)

    def with_topics(self, k: int) -> "Vocabulary":
        base = len(self.terms) - self.n_reserved
        terms = self.terms[:base] + [topic_token(i) for i in range(k)]
        idf = np.concatenate([self.idf[:base], np.ones(k)])
        return Vocabulary(terms, idf, k)

    def embed(self, text: str) -> np.ndarray:
        """TF-IDF vector of ``text``; zero vector when no term is in vocabulary.

        Reserved topic terms match only as whole tokens, e.g. ``topic_3``.
        """
        v = np.zeros(self.dim)
        for tok, c in Counter(text_tokens(text)).items():
            i = self.index.get(tok)
            if i is not None:
                v[i] = c * self.idf[i]
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def to_json(self) -> dict:
        return {"terms": self.terms, "idf": self.idf.tolist(), "n_reserved": self.n_reserved}

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        return cls(list(d["terms"]), np.asarray(d["idf"]), int(d.get("n_reserved", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def build_vocabulary(texts: Sequence[str], min_df: int = 2, max_df_ratio: float = 0.5) -> Vocabulary:
    """Terms in at least ``min_df`` docs and at most ``max_df_ratio`` of docs (inclusive).

    IDF is the smoothed ``ln((1 + N) / (1 + df)) + 1``.
    """
    n = len(texts)
    df: Counter = Counter()
    for t in texts:
        df.update(set(text_tokens(t)))
    terms = sorted(t for t, c in df.items() if c >= min_df and c <= max_df_ratio * n)
    if not terms:
        raise EmptyVocabularyError("no term survives document-frequency pruning")
    idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms])
    return Vocabulary(terms, idf)


def embed_corpus(summaries: Sequence[tuple[str, str]]) -> tuple[np.ndarray, Vocabulary]:
    """Embed ``(entity_id, text)`` pairs; rows follow input order."""
    if not summaries:
        raise ValueError("empty corpus")
    vocab = build_vocabulary([text for _, text in summaries])
    return np.vstack([vocab.embed(text) for _, text in summaries]), vocab


@dataclass
class ClusterModel:
    centroids: np.ndarray
    labels: np.ndarray
    ids: list[str] | None = None
    sse_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def assignments(self) -> dict[str, int]:
        ids = self.ids if self.ids is not None else [str(i) for i in range(len(self.labels))]
        return {eid: int(c) for eid, c in zip(ids, self.labels)}


def sse(points: np.ndarray, model: ClusterModel) -> float:
    points = np.asarray(points, dtype=np.float64)
    diff = points - model.centroids[model.labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def assign_topic(embedding: np.ndarray, model: ClusterModel) -> int:
    """Index of the nearest centroid; ties go to the smallest index."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (model.centroids.shape[1],):
        raise ValueError(
            f"embedding dim {embedding.shape} does not match centroid dim {model.centroids.shape[1]}")
    return int(np.argmin(((model.centroids - embedding) ** 2).sum(axis=1)))


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def _canonical_order(points: np.ndarray, ids: Sequence[str] | None) -> np.ndarray:
    if ids is not None:
        return np.array(sorted(range(len(ids)), key=lambda i: ids[i]), dtype=np.intp)
    # lexicographic on coordinates, so the result ignores input order
    return np.lexsort(points.T[::-1]) if points.shape[1] else np.arange(len(points))


def _reseed_empty(points, centroids, labels, counts) -> None:
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return
    d2 = ((points - centroids[labels]) ** 2).sum(axis=1)
    taken: set[int] = set()
    for c in empty:
        # farthest point from its centroid, stable on ties
        order = np.argsort(-d2, kind="stable")
        idx = next(int(i) for i in order if int(i) not in taken)
        taken.add(idx)
        centroids[c] = points[idx]


def kmeans(points: np.ndarray, k: int, seed: int = 0, batch_size: int | None = None,
           ids: Sequence[str] | None = None, max_iter: int = MAX_ITER, tol: float = TOL,
           init_size: int | None = None) -> ClusterModel:
    """Cluster ``points`` into ``k`` groups.

    Points are first put in a canonical order (by ``ids`` when given,
    otherwise by coordinates) so the outcome does not depend on input order.
    Full-batch mode runs Lloyd iterations and checks after every step that
    SSE did not increase. With ``batch_size`` set, mini-batch updates with
    per-centroid learning rates are used instead.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or not len(points):
        raise ValueError("points must be a non-empty 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    n_distinct = len(np.unique(points, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct points ({n_distinct})")
    if ids is not None and len(ids) != len(points):
        raise ValueError("ids and points differ in length")

    order = _canonical_order(points, ids)
    x = points[order]
    rng = np.random.default_rng(seed)

    if batch_size is None:
        centroids, labels, history, n_iter = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
    else:
        centroids, labels, history, n_iter = _minibatch(x, k, rng, batch_size, init_size,
                                                        max_iter, tol)
    out = np.empty(len(points), dtype=np.intp)
    out[order] = labels
    return ClusterModel(centroids, out, list(ids) if ids is not None else None, history, n_iter)


def _lloyd(x, centroids, max_iter, tol):
    k = len(centroids)
    history: list[float] = []
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        new = centroids.copy()
        for c in range(k):
            if counts[c]:
                # fixed reduction order: members in canonical index order
                new[c] = x[labels == c].mean(axis=0)
        _reseed_empty(x, new, labels, counts)
        cur = float(((x - new[labels]) ** 2).sum())
        if history and cur > history[-1] + 1e-12 * max(1.0, history[-1]):
            raise RuntimeError(f"k-means SSE increased at iteration {it}: {history[-1]} -> {cur}")
        history.append(cur)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        new_labels = np.argmin(_sq_dists(x, centroids), axis=1)
        after = float(((x - centroids[new_labels]) ** 2).sum())
        if after > cur + 1e-12 * max(1.0, cur):
            raise RuntimeError(f"k-means SSE increased on reassignment at iteration {it}")
        labels = new_labels
        if shift < tol:
            break
    return centroids, labels, history, it


def _minibatch(x, k, rng, batch_size, init_size, max_iter, tol):
    n = len(x)
    init_n = min(n, init_size or max(3 * batch_size, 3 * k))
    sample = x[np.sort(rng.choice(n, size=init_n, replace=False))] if init_n < n else x
    if len(np.unique(sample, axis=0)) < k:
        sample = x
    centroids = _kmeans_pp(sample, k, rng)
    counts = np.zeros(k)
    it = 0
    for it in range(1, max_iter + 1):
        batch = x[rng.choice(n, size=min(batch_size, n), replace=False)]
        nearest = np.argmin(_sq_dists(batch, centroids), axis=1)
        old = centroids.copy()
        for p, c in zip(batch, nearest):
            counts[c] += 1
            eta = 1.0 / counts[c]
            centroids[c] = (1 - eta) * centroids[c] + eta * p
        if float(np.sqrt(((centroids - old) ** 2).sum(axis=1)).max()) < tol:
            break
    labels = np.argmin(_sq_dists(x, centroids), axis=1)
    return centroids, labels, [float(((x - centroids[labels]) ** 2).sum())], it


def elbow_from_series(series: Sequence[tuple[int, float]]) -> int:
    """k with the largest second difference ``SSE(k-1) - 2 SSE(k) + SSE(k+1)``.

    Only interior ks compete; ties go to the smallest k.
    """
    if len(series) < 3:
        raise ValueError("need at least 3 points in the SSE series")
    best_k, best = None, -math.inf
    for (_, a), (k, b), (_, c) in zip(series, series[1:], series[2:]):
        d2 = a - 2 * b + c
        if d2 > best:
            best_k, best = k, d2
    return best_k


def sse_series(points: np.ndarray, k_range: tuple[int, int], seed: int = 0,
               ids: Sequence[str] | None = None, batch_size: int | None = None,
               ) -> list[tuple[int, float]]:
    lo, hi = k_range
    out = []
    for k in range(lo, hi + 1):
        model = kmeans(points, k, seed=seed, batch_size=batch_size, ids=ids)
        out.append((k, sse(points, model)))
    return out


def choose_k(points: np.ndarray, k_range: tuple[int, int], seed: int = 0,
             ids: Sequence[str] | None = None) -> tuple[int, list[tuple[int, float]]]:
    """Pick k by the elbow rule; returns ``(k, [(k, sse), ...])`` for plotting."""
    lo, hi = k_range
    if hi - lo + 1 < 3:
        raise ValueError("k range must span at least 3 values")
    series = sse_series(points, k_range, seed, ids)
    return elbow_from_series(series), series


def save_topics(assignments: dict[str, int], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for eid, t in assignments.items():
            fh.write(json.dumps({"id": eid, "topic": int(t)}) + "\n")


def load_topics(path: str | Path) -> dict[str, int]:
    with open(path, encoding="utf-8") as fh:
        return {r["id"]: int(r["topic"]) for r in map(json.loads, filter(str.strip, fh))}


def save_sse_csv(series: Sequence[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("k,sse\n")
        for k, v in series:
            fh.write(f"{k},{v!r}\n")
