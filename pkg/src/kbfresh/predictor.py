"""Dense-matrix GCN graph classifier with hand-written backpropagation.

Architecture::

    H1 = relu(Â X W0)            Â = D^-1/2 (A + I) D^-1/2
    H2 = relu(Â H1 W1)
    h  = mean over nodes of H2   (64)
    z1 = relu(h F1 + b1)         (32)
    z2 = relu(z1 F2 + b2)        (16)
    p  = sigmoid(z2 Out + b_out)

Training is plain SGD with batch size 1 on binary cross-entropy. A
logistic-regression baseline on mean-pooled raw node features shares the
same split, loop and metrics.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kb import PropertyGraph

GCN_UNITS = 64
FC_UNITS = (32, 16)
EPS = 1e-7
MODEL_VERSION = 1

GCN_PARAM_NAMES = ("W0", "W1", "F1", "b1", "F2", "b2", "Out", "b_out")
LOGISTIC_PARAM_NAMES = ("w", "b")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 25
    seed: int = 0
    split: tuple[float, float, float] = (0.64, 0.16, 0.20)  # train, test, val
    threshold: float = 0.5

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ConfigurationError(f"split fractions must be 3 non-negative values summing to 1, got {self.split}")


# parameters -----------------------------------------------------------------

class Params:
    """Named weight arrays; subclasses fix the names and shapes."""

    kind = "params"
    names: tuple[str, ...] = ()

    def __init__(self, arrays: dict[str, np.ndarray]):
        missing = set(self.names) - arrays.keys()
        if missing:
            raise ValueError(f"missing parameter arrays {sorted(missing)}")
        self.arrays = {k: np.asarray(arrays[k], dtype=np.float64) for k in self.names}

    def __getattr__(self, name):
        arrays = self.__dict__.get("arrays")
        if arrays is not None and name in arrays:
            return arrays[name]
        raise AttributeError(name)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.shapes()})"

    def copy(self):
        return type(self)({k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self):
        return type(self)({k: np.zeros_like(v) for k, v in self.arrays.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.arrays.items()}

    def sgd_step(self, grads: "Params", lr: float) -> None:
        for k, g in grads.arrays.items():
            self.arrays[k] -= lr * g

    def __eq__(self, other) -> bool:
        return (type(self) is type(other) and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v, other.arrays[k]) for k, v in self.arrays.items()))

    @property
    def f(self) -> int:
        raise NotImplementedError


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


class GcnParams(Params):
    kind = "gcn"
    names = GCN_PARAM_NAMES

    @classmethod
    def init(cls, f: int, seed: int | np.random.Generator = 0) -> "GcnParams":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        h1, h2 = FC_UNITS
        return cls({
            "W0": _glorot(rng, f, GCN_UNITS),
            "W1": _glorot(rng, GCN_UNITS, GCN_UNITS),
            "F1": _glorot(rng, GCN_UNITS, h1),
            "b1": np.zeros(h1),
            "F2": _glorot(rng, h1, h2),
            "b2": np.zeros(h2),
            "Out": _glorot(rng, h2, 1),
            "b_out": np.zeros(1),
        })

    @classmethod
    def zeros(cls, f: int) -> "GcnParams":
        p = cls.init(f, 0)
        return p.zeros_like()

    @property
    def f(self) -> int:
        return self.arrays["W0"].shape[0]


class LogisticParams(Params):
    kind = "logistic"
    names = LOGISTIC_PARAM_NAMES

    @classmethod
    def init(cls, f: int, seed=0) -> "LogisticParams":
        return cls({"w": np.zeros(f), "b": np.zeros(1)})

    @property
    def f(self) -> int:
        return self.arrays["w"].shape[0]


# forward / backward ---------------------------------------------------------

def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization of A + I."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.array_equal(a, a.T):
        raise ValueError("adjacency must be a symmetric square matrix")
    a_tilde = a + np.eye(len(a))
    inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    return np.maximum(x, 0.0)


def bce_loss(p: float, y: int) -> float:
    p = min(max(float(p), EPS), 1.0 - EPS)
    return -(y * math.log(p) + (1 - y) * math.log(1.0 - p))


@dataclass
class Prepared:
    """Per-graph tensors that do not depend on the weights."""

    a_hat: np.ndarray
    x: np.ndarray
    ax: np.ndarray
    pooled_x: np.ndarray
    y: int

    @classmethod
    def of(cls, graph: PropertyGraph) -> "Prepared":
        a_hat = normalize_adjacency(graph.adjacency)
        x = graph.features
        return cls(a_hat, x, a_hat @ x, x.mean(axis=0), int(graph.label))


def _gcn_forward(pg: Prepared, params: GcnParams) -> tuple[float, dict]:
    if pg.x.shape[1] != params.f:
        raise ValueError(f"graph feature dim {pg.x.shape[1]} != model dim {params.f}")
    P = params.arrays
    p1 = pg.ax @ P["W0"]
    h1 = relu(p1)
    ah1 = pg.a_hat @ h1
    p2 = ah1 @ P["W1"]
    h2 = relu(p2)
    hg = h2.mean(axis=0)
    q1 = hg @ P["F1"] + P["b1"]
    z1 = relu(q1)
    q2 = z1 @ P["F2"] + P["b2"]
    z2 = relu(q2)
    logit = float(z2 @ P["Out"][:, 0] + P["b_out"][0])
    raw = float(sigmoid(logit))
    p = min(max(raw, EPS), 1.0 - EPS)
    cache = dict(p1=p1, h1=h1, ah1=ah1, p2=p2, hg=hg, q1=q1, z1=z1, q2=q2, z2=z2,
                 logit=logit, raw=raw, p=p)
    return p, cache


def _gcn_backward(pg: Prepared, params: GcnParams, cache: dict, y: int) -> GcnParams:
    P = params.arrays
    raw = cache["raw"]
    # d loss / d logit; zero where the probability clamp is active
    dlogit = raw - y if EPS < raw < 1.0 - EPS else 0.0

    d_out = cache["z2"][:, None] * dlogit
    db_out = np.array([dlogit])
    dz2 = P["Out"][:, 0] * dlogit
    dq2 = dz2 * (cache["q2"] > 0)
    dF2 = np.outer(cache["z1"], dq2)
    db2 = dq2
    dz1 = P["F2"] @ dq2
    dq1 = dz1 * (cache["q1"] > 0)
    dF1 = np.outer(cache["hg"], dq1)
    db1 = dq1
    dhg = P["F1"] @ dq1

    n = pg.x.shape[0]
    dh2 = np.broadcast_to(dhg / n, (n, dhg.shape[0]))
    dp2 = dh2 * (cache["p2"] > 0)
    dW1 = cache["ah1"].T @ dp2
    dh1 = pg.a_hat.T @ (dp2 @ P["W1"].T)
    dp1 = dh1 * (cache["p1"] > 0)
    dW0 = pg.ax.T @ dp1
    return GcnParams({"W0": dW0, "W1": dW1, "F1": dF1, "b1": db1, "F2": dF2, "b2": db2,
                      "Out": d_out, "b_out": db_out})


def gcn_forward(graph: PropertyGraph | Prepared, params: GcnParams) -> tuple[float, dict]:
    """Probability that the entity changed, plus cached activations for backward."""
    pg = graph if isinstance(graph, Prepared) else Prepared.of(graph)
    p, cache = _gcn_forward(pg, params)
    cache["prepared"] = pg
    return p, cache


def gcn_backward(graph: PropertyGraph | Prepared, params: GcnParams, cache: dict, y: int) -> GcnParams:
    """Exact gradients of ``bce_loss(p, y)`` for every parameter."""
    pg = cache.get("prepared") or Prepared.of(graph)
    return _gcn_backward(pg, params, cache, y)


def _logistic_forward(pg: Prepared, params: LogisticParams) -> tuple[float, dict]:
    if pg.pooled_x.shape[0] != params.f:
        raise ValueError(f"graph feature dim {pg.pooled_x.shape[0]} != model dim {params.f}")
    logit = float(pg.pooled_x @ params.arrays["w"] + params.arrays["b"][0])
    raw = float(sigmoid(logit))
    return min(max(raw, EPS), 1.0 - EPS), {"raw": raw}


def _logistic_backward(pg: Prepared, params: LogisticParams, cache: dict, y: int) -> LogisticParams:
    raw = cache["raw"]
    dlogit = raw - y if EPS < raw < 1.0 - EPS else 0.0
    return LogisticParams({"w": pg.pooled_x * dlogit, "b": np.array([dlogit])})


_FORWARD = {GcnParams: _gcn_forward, LogisticParams: _logistic_forward}
_BACKWARD = {GcnParams: _gcn_backward, LogisticParams: _logistic_backward}


def predict(graph: PropertyGraph | Prepared, params: Params, threshold: float = 0.5) -> tuple[int, float]:
    """``(label, score)`` with ``label = score >= threshold``."""
    pg = graph if isinstance(graph, Prepared) else Prepared.of(graph)
    score, _ = _FORWARD[type(params)](pg, params)
    return int(score >= threshold), score


# training -------------------------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment: each size is within 1 of ``n * fraction``."""
    exact = [n * fr for fr in fractions]
    sizes = [math.floor(e) for e in exact]
    rest = n - sum(sizes)
    order = sorted(range(len(exact)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_indices(n: int, fractions: Sequence[float] = (0.64, 0.16, 0.20),
                  seed: int | np.random.Generator = 0) -> dict[str, np.ndarray]:
    """Seeded shuffle of ``range(n)`` cut into train/test/val."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train, n_test, _ = split_sizes(n, fractions)
    return {
        "train": np.sort(perm[:n_train]),
        "test": np.sort(perm[n_train:n_train + n_test]),
        "val": np.sort(perm[n_train + n_test:]),
    }


@dataclass
class TrainResult:
    params: Params
    curves: list[dict] = field(default_factory=list)
    split: dict[str, np.ndarray] = field(default_factory=dict)
    threshold: float = 0.5


def _evaluate(prepared: Sequence[Prepared], params: Params, threshold: float) -> tuple[float, float]:
    if not prepared:
        return math.nan, math.nan
    fwd = _FORWARD[type(params)]
    loss = correct = 0.0
    for pg in prepared:
        p, _ = fwd(pg, params)
        loss += bce_loss(p, pg.y)
        correct += int(p >= threshold) == pg.y
    return loss / len(prepared), correct / len(prepared)


def _fit(dataset: Sequence[PropertyGraph], config: TrainConfig, params_cls) -> TrainResult:
    if not dataset:
        raise ConfigurationError("empty dataset")
    rng = np.random.default_rng(config.seed)
    split = split_indices(len(dataset), config.split, rng)
    prepared = [Prepared.of(g) for g in dataset]
    train_set = [prepared[i] for i in split["train"]]
    val_set = [prepared[i] for i in split["val"]]
    if len({pg.y for pg in train_set}) < 2:
        raise ConfigurationError("training split must contain both classes")

    params = params_cls.init(dataset[0].f, rng)
    fwd, bwd = _FORWARD[params_cls], _BACKWARD[params_cls]
    curves = []
    for epoch in range(1, config.epochs + 1):
        for i in rng.permutation(len(train_set)):
            pg = train_set[i]
            _, cache = fwd(pg, params)
            params.sgd_step(bwd(pg, params, cache, pg.y), config.learning_rate)
        tl, ta = _evaluate(train_set, params, config.threshold)
        vl, va = _evaluate(val_set, params, config.threshold)
        curves.append({"epoch": epoch, "train_loss": tl, "train_acc": ta,
                       "val_loss": vl, "val_acc": va})
    return TrainResult(params, curves, split, config.threshold)


def train(dataset: Sequence[PropertyGraph], config: TrainConfig = TrainConfig()) -> TrainResult:
    """Train the GCN with per-example SGD on the seeded train split."""
    return _fit(dataset, config, GcnParams)


def baseline_logistic(dataset: Sequence[PropertyGraph], config: TrainConfig = TrainConfig()) -> TrainResult:
    """Logistic regression on mean-pooled raw node features (no propagation)."""
    return _fit(dataset, config, LogisticParams)


def accuracy(graphs: Sequence[PropertyGraph], params: Params, threshold: float = 0.5) -> float:
    return _evaluate([Prepared.of(g) for g in graphs], params, threshold)[1]


# persistence ----------------------------------------------------------------

_KINDS = {cls.kind: cls for cls in (GcnParams, LogisticParams)}


def save_model(result: TrainResult | Params, path: str | Path, **extra) -> None:
    params = result.params if isinstance(result, TrainResult) else result
    doc = {
        "version": MODEL_VERSION,
        "kind": params.kind,
        "f": params.f,
        "shapes": {k: list(v.shape) for k, v in params.arrays.items()},
        "weights": {k: v.ravel().tolist() for k, v in params.arrays.items()},
    }
    if isinstance(result, TrainResult):
        doc["threshold"] = result.threshold
        doc["split"] = {k: [int(i) for i in v] for k, v in result.split.items()}
    doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> tuple[Params, dict]:
    """Parameters and the raw document (threshold, split, ...)."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != MODEL_VERSION or doc.get("kind") not in _KINDS:
        raise ValueError(f"{path}: unsupported model file")
    cls = _KINDS[doc["kind"]]
    arrays = {k: np.asarray(doc["weights"][k], dtype=np.float64).reshape(doc["shapes"][k])
              for k in cls.names}
    return cls(arrays), doc


def save_curves(curves: Sequence[dict], path: str | Path) -> None:
    cols = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in curves:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in cols[1:]])
