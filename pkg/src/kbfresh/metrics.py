"""Evaluation: MSE, AUC, per-class precision/recall/F1 and topic KL divergence."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

METRIC_KEYS = ("mse", "auc", "precision_uc", "recall_uc", "f1_uc",
               "precision_c", "recall_c", "f1_c", "kl_bits", "kl_count_scaled")


class UndefinedMetricError(ValueError):
    pass


def mse(scores: Sequence[float], labels: Sequence[int]) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    if not len(s):
        raise ValueError("mse of an empty sample")
    return float(np.mean((s - y) ** 2))


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(tie), via midranks.

    Midranks are exact for ties; the rank sum of a float sample is an
    integer or half-integer so the result carries no approximation beyond
    the final division.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks2 = np.empty(len(s), dtype=np.int64)  # twice the midrank, kept integral
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks2[order[i:j + 1]] = i + j + 2
        i = j + 1
    u2 = int(ranks2[y == 1].sum()) - n_pos * (n_pos + 1)
    return u2 / (2 * n_pos * n_neg)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = ()


def _class_scores(tp: int, fp: int, fn: int) -> ClassScores:
    undefined = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    return ClassScores(precision, recall, f1, tuple(undefined))


def prf(predictions: Sequence[int], labels: Sequence[int]) -> dict[str, ClassScores]:
    """Per-class scores for C (changed, label 1) and UC (unchanged, label 0).

    Zero denominators yield 0 and are listed in ``ClassScores.undefined``.
    """
    p = np.asarray(predictions).astype(int)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape or not len(p):
        raise ValueError("predictions and labels must be non-empty and of equal length")
    tp = int(((p == 1) & (y == 1)).sum())
    tn = int(((p == 0) & (y == 0)).sum())
    fp = int(((p == 1) & (y == 0)).sum())
    fn = int(((p == 0) & (y == 1)).sum())
    return {"C": _class_scores(tp, fp, fn), "UC": _class_scores(tn, fn, fp)}


def classification_metrics(scores: Sequence[float], labels: Sequence[int],
                           threshold: float = 0.5) -> dict[str, float | None]:
    """The eight score-based keys of ``METRIC_KEYS``; AUC is None for one class."""
    preds = [int(s >= threshold) for s in scores]
    per = prf(preds, labels)
    try:
        a = auc(scores, labels)
    except UndefinedMetricError:
        a = None
    return {
        "mse": mse(scores, labels),
        "auc": a,
        "precision_uc": per["UC"].precision, "recall_uc": per["UC"].recall, "f1_uc": per["UC"].f1,
        "precision_c": per["C"].precision, "recall_c": per["C"].recall, "f1_c": per["C"].f1,
    }


@dataclass(frozen=True)
class TopicDistribution:
    counts: Mapping[int, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def normalized(self, support: Iterable[int] | None = None) -> dict[int, float]:
        """Add-one smoothed probabilities over ``support`` (default: own topics)."""
        keys = sorted(set(support) if support is not None else set(self.counts))
        smoothed = {t: self.counts.get(t, 0) + 1 for t in keys}
        z = sum(smoothed.values())
        return {t: c / z for t, c in smoothed.items()}


def topic_distribution(topics: Iterable[int]) -> TopicDistribution:
    return TopicDistribution(dict(Counter(int(t) for t in topics)))


def kl_bits(p: Sequence[float], q: Sequence[float]) -> float:
    """sum p log2(p / q) over proper distributions, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return math.inf
    return float(np.sum(p[mask] * np.log2(p[mask] / q[mask])))


def kl_divergence(P: TopicDistribution, Q: TopicDistribution) -> float:
    """KL(P || Q) in bits on add-one smoothed distributions over the union support."""
    support = set(P.counts) | set(Q.counts)
    if not support:
        return 0.0
    p, q = P.normalized(support), Q.normalized(support)
    keys = sorted(support)
    return max(0.0, kl_bits([p[k] for k in keys], [q[k] for k in keys]))


def kl_report(P: TopicDistribution, Q: TopicDistribution) -> dict[str, float]:
    """Normalized KL plus the count-scaled variant (KL times P's total count)."""
    kl = kl_divergence(P, Q)
    return {"kl_bits": kl, "kl_count_scaled": kl * P.total}


def format_percent(value: float | None) -> str:
    return "n/a" if value is None else f"{100 * value:.0f}%"
