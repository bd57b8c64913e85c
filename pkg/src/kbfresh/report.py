"""Human-readable run summary plus CSV series and figures."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from .graphs import attribute_histogram
from .kb import load_graphs
from .metrics import METRIC_KEYS
from .pipeline import ARTIFACTS, read_manifest

log = logging.getLogger(__name__)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def write_report(workdir: str | Path, manifest: str | Path | None = None,
                 metrics_path: str | Path | None = None, figures: bool = True,
                 out: str | Path | None = None) -> str:
    """Write ``report.md`` (and figures) into ``workdir``; returns the text.

    Missing inputs are listed as gaps instead of failing.
    """
    wd = Path(workdir)
    manifest = Path(manifest or wd / ARTIFACTS["manifest"])
    metrics_path = Path(metrics_path or wd / ARTIFACTS["metrics"])
    lines = ["# kbfresh run report", ""]
    gaps: list[str] = []

    entries = read_manifest(manifest)
    latest = {}
    for e in entries:
        latest[e["stage"]] = e
    lines += ["## Stages", ""]
    if latest:
        lines += ["| stage | info |", "|---|---|"]
        for name, e in latest.items():
            info = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(e.get("info", {}).items()))
            lines.append(f"| {name} | {info} |")
    else:
        gaps.append(f"manifest {manifest.name}")
        lines.append("(no manifest)")
    lines.append("")

    lines += ["## Metrics", ""]
    baseline_path = wd / ARTIFACTS["baseline_metrics"]
    doc = json.loads(metrics_path.read_text(encoding="utf-8")) if metrics_path.exists() else None
    base = json.loads(baseline_path.read_text(encoding="utf-8")) if baseline_path.exists() else None
    if doc is None:
        gaps.append(f"metrics file {metrics_path.name}")
    lines += ["| metric | GCN | logistic |", "|---|---|---|"]
    for k in METRIC_KEYS:
        v = "MISSING" if doc is None or k not in doc else _fmt(doc[k])
        b = "" if base is None or k not in base else _fmt(base[k])
        lines.append(f"| {k} | {v} | {b} |")
    if doc is not None:
        for k in METRIC_KEYS:
            if k not in doc:
                gaps.append(f"metric {k}")
    lines.append("")

    series = {}
    for name, fname in (("SSE vs k", ARTIFACTS["sse"]), ("training curves", ARTIFACTS["curves"])):
        p = wd / fname
        if p.exists():
            series[fname] = _read_csv(p)
            lines.append(f"- {name}: `{fname}` ({len(series[fname])} rows)")
        else:
            gaps.append(f"{name} ({fname})")

    graphs_path = wd / ARTIFACTS["graphs"]
    hist = []
    if graphs_path.exists():
        hist = attribute_histogram(load_graphs(graphs_path))
        with open(wd / "attributes.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["attribute", "count"])
            w.writerows(hist)
        lines.append(f"- attribute histogram: `attributes.csv` ({len(hist)} attributes)")

    if figures:
        from . import plotting
        if ARTIFACTS["sse"] in series:
            k = latest.get("topics", {}).get("info", {}).get("k")
            pts = [(int(r["k"]), float(r["sse"])) for r in series[ARTIFACTS["sse"]]]
            plotting.plot_sse(pts, wd / "sse.png", k)
            lines.append("- figure: `sse.png`")
        if ARTIFACTS["curves"] in series:
            rows = [{k: float(v) for k, v in r.items()} for r in series[ARTIFACTS["curves"]]]
            plotting.plot_curves(rows, wd / "curves.png")
            lines.append("- figure: `curves.png`")
        if hist:
            plotting.plot_attributes(hist, wd / "attributes.png")
            lines.append("- figure: `attributes.png`")

    lines += ["", "## Gaps", ""]
    lines += [f"- {g}" for g in gaps] or ["none"]
    text = "\n".join(lines) + "\n"
    Path(out or wd / "report.md").write_text(text, encoding="utf-8")
    return text
