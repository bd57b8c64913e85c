import json

import numpy as np
import pytest

from kbfresh.kb import CENTER, TOPIC, VALUE, Entity, PropertyGraph, Triple


def make_entity(eid, name, pairs=(), summary=""):
    return Entity(eid, name, summary, tuple(Triple(name, p, o) for p, o in pairs))


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
    return path


def random_star_graph(rng, n, f, label=None, entity_id="g"):
    """Star graph with n nodes (Center first, Topic second when n >= 2)."""
    a = np.zeros((n, n), dtype=np.int8)
    a[0, 1:] = a[1:, 0] = 1
    roles = (CENTER,) if n == 1 else (CENTER, TOPIC) + (VALUE,) * (n - 2)
    x = rng.normal(size=(n, f))
    y = int(rng.integers(0, 2)) if label is None else label
    return PropertyGraph(a, x, roles, {(0, i): f"p{i}" for i in range(1, n)}, y, entity_id)


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda ln: int(ln.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def numeric_gradients(loss_fn, params, step=1e-5):
    """Central finite differences of ``loss_fn(params)`` for every array entry.

    ``loss_fn`` returns ``(loss, pattern)`` where ``pattern`` is any hashable
    record of which relu units are active (or None). Entries whose +/- step
    perturbation changes the pattern straddle a kink, where the difference
    quotient is meaningless; they come back as NaN.
    """
    _, base = loss_fn(params)
    grads = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + step
            up, pat_up = loss_fn(params)
            arr[idx] = orig - step
            down, pat_down = loss_fn(params)
            arr[idx] = orig
            kinked = pat_up != base or pat_down != base
            g[idx] = np.nan if kinked else (up - down) / (2 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest |a - n| / max(|a|, |n|, floor) over entries that are not NaN."""
    worst = 0.0
    for name, n in numeric.items():
        ok = ~np.isnan(n)
        a, n = analytic[name][ok], n[ok]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def gcn_loss_and_pattern(graph):
    """``params -> (bce loss, relu activation pattern)`` for one graph."""
    from kbfresh.predictor import Prepared, bce_loss, gcn_forward

    pg = Prepared.of(graph)

    def fn(params):
        p, cache = gcn_forward(pg, params)
        pattern = b"".join(np.packbits(cache[k] > 0).tobytes() for k in ("p1", "p2", "q1", "q2"))
        return bce_loss(p, graph.label), pattern
    return fn


PREDICATES = ["birth", "birthday", "birth day", "spouse", "spouses", "color", "colour",
              "composition", "office", "officer", "population", "mayor"]
OBJECTS = ["Trump", "Biden", "1990", "1991", "red", "blue", "Paris", "Rome", "x", "y"]


def random_entity_pair(rng, name="E"):
    """A KB entity and a fresh version that overlaps, renames and edits it."""
    def pairs(k):
        return [(PREDICATES[int(rng.integers(len(PREDICATES)))], OBJECTS[int(rng.integers(len(OBJECTS)))])
                for _ in range(k)]
    old = pairs(int(rng.integers(0, 7)))
    keep = [p for p in old if rng.random() < 0.5]
    fresh = keep + pairs(int(rng.integers(0, 5)))
    return make_entity("Q1", name, old), make_entity("Q1", name, fresh)
