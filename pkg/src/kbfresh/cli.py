"""Command line entry point: ``kbfresh <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 missing dependency.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .kb import ValidationError
from .predictor import ConfigurationError
from .synthetic import FIXTURE_DIR

log = logging.getLogger("kbfresh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEPENDENCY = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# flags shared with the config file; dest must equal the RunConfig key
_CONFIG_FLAGS = {
    "kb": dict(help="knowledge-base dump (JSON-lines)"),
    "log": dict(help="query log (JSON-lines or plain text)"),
    "source": dict(help="encyclopedia dump path or http(s) base URL"),
    "seed": dict(type=int),
    "n_max": dict(type=int, help="longest n-gram"),
    "max_dist": dict(help="max edit distance for name matching, or 'auto'"),
    "k": dict(help="number of topics or 'auto'"),
    "k_min": dict(type=int),
    "k_max": dict(type=int),
    "window": dict(help="label window START..END"),
    "epochs": dict(type=int),
    "learning_rate": dict(type=float),
    "threshold": dict(type=float),
    "parallelism": dict(type=int),
    "include_topic": dict(help="true/false: feed the topic node feature"),
    "predicate_max_dist": dict(type=int),
    "max_failure_rate": dict(type=float),
}


def _add_config_flags(p: argparse.ArgumentParser, keys) -> None:
    for key in keys:
        opts = dict(_CONFIG_FLAGS[key])
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, **opts)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--manifest", help="manifest file (default: next to the first output)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="kbfresh", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("extract-seeds", help="query log -> seed entities")
    _common(p)
    _add_config_flags(p, ["log", "kb", "max_dist"])
    p.add_argument("--nmax", dest="n_max", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("topics", help="cluster entity summaries into topics")
    _common(p)
    _add_config_flags(p, ["kb", "k", "k_min", "k_max", "seed"])
    p.add_argument("--out", required=True)
    p.add_argument("--sse-csv", required=True)
    p.add_argument("--vocab", help="vocabulary output (default: <out stem>.vocab.json)")

    p = sub.add_parser("build-graphs", help="fetch, label and build property graphs")
    _common(p)
    _add_config_flags(p, ["source", "window", "parallelism", "include_topic", "max_failure_rate"])
    p.add_argument("--seeds", required=True)
    p.add_argument("--topics", required=True)
    p.add_argument("--vocab")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the GCN (or --baseline logistic model)")
    _common(p)
    _add_config_flags(p, ["seed", "epochs", "learning_rate", "threshold"])
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curves", required=True)
    p.add_argument("--baseline", action="store_true", help="logistic regression on pooled features")

    p = sub.add_parser("predict", help="score graphs with a trained model")
    _common(p)
    _add_config_flags(p, ["threshold"])
    p.add_argument("--graphs", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sync", help="diff and update entities predicted stale")
    _common(p)
    _add_config_flags(p, ["kb", "source", "predicate_max_dist"])
    p.add_argument("--preds", required=True)
    p.add_argument("--dry-run", action="store_true", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="MSE, AUC and per-class P/R/F1")
    _common(p)
    _add_config_flags(p, ["threshold"])
    p.add_argument("--preds", required=True)
    p.add_argument("--labels", required=True, help="graph store holding the true labels")
    p.add_argument("--split", default="test", choices=["train", "test", "val", "all"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-kl", help="KL divergence of queried vs predicted-stale topics")
    _common(p)
    p.add_argument("--p", required=True, help="seeds.jsonl (user query distribution)")
    p.add_argument("--q", required=True, help="preds.jsonl (predicted update distribution)")
    p.add_argument("--topics", required=True)
    p.add_argument("--out", help="metrics.json to merge into (printed if omitted)")

    p = sub.add_parser("report", help="summary, CSV series and figures for a run directory")
    _common(p)
    p.add_argument("--workdir", default=".")
    p.add_argument("--metrics")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("run-all", help="every stage end to end")
    _common(p)
    _add_config_flags(p, list(_CONFIG_FLAGS))
    p.add_argument("--dry-run", action="store_true", default=None)
    p.add_argument("--fixture", action="store_true", help="use the bundled synthetic fixture")
    p.add_argument("--workdir", required=True)
    p.add_argument("--resume", action="store_true", help="skip stages that are up to date")
    p.add_argument("--no-figures", action="store_true")
    return ap


def resolve_config(args) -> pl.RunConfig:
    values: dict = {}
    if getattr(args, "fixture", False):
        values.update(pl.parse_config_file(FIXTURE_DIR / "run.cfg"))
    if args.config:
        try:
            values.update(pl.parse_config_file(args.config))
        except OSError as exc:
            raise pl.DependencyError(f"config file: {exc}") from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    values.update({k: v for k, v in vars(args).items() if k in pl.RunConfig.keys() and v is not None})
    try:
        cfg = pl.RunConfig().updated(values)
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from None
    if cfg.k != "auto" and not cfg.k.isdigit():
        raise UsageError(f"k must be an integer or 'auto', got {cfg.k!r}")
    if cfg.max_dist != "auto" and not cfg.max_dist.isdigit():
        raise UsageError(f"max_dist must be an integer or 'auto', got {cfg.max_dist!r}")
    return cfg


def _manifest(args, first_out: str) -> str:
    return args.manifest or str(Path(first_out).parent / "manifest.jsonl")


def _require(cfg: pl.RunConfig, *keys: str) -> None:
    for k in keys:
        if getattr(cfg, k) is None:
            raise UsageError(f"--{k} is required (flag or config key)")


def dispatch(args) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "extract-seeds":
        _require(cfg, "log", "kb")
        stage = pl.stage_extract_seeds(cfg.log, cfg.kb, args.out, cfg)
    elif cmd == "topics":
        _require(cfg, "kb")
        stage = pl.stage_topics(cfg.kb, args.out, args.sse_csv, cfg, args.vocab)
    elif cmd == "build-graphs":
        _require(cfg, "source")
        stage = pl.stage_build_graphs(args.seeds, cfg.source, args.topics, args.out, cfg, args.vocab)
    elif cmd == "train":
        stage = pl.stage_train(args.graphs, args.out, args.curves, cfg, baseline=args.baseline)
    elif cmd == "predict":
        stage = pl.stage_predict(args.graphs, args.model, args.out, cfg)
    elif cmd == "sync":
        _require(cfg, "kb", "source")
        stage = pl.stage_sync(cfg.kb, args.preds, cfg.source, args.report, args.out, cfg)
    elif cmd == "eval":
        stage = pl.stage_eval(args.preds, args.labels, args.out, cfg, split=args.split)
    elif cmd == "eval-kl":
        if args.out is None:
            missing = [p for p in (args.p, args.q, args.topics) if not Path(p).exists()]
            if missing:
                raise pl.DependencyError(f"eval-kl: missing input {missing[0]}")
            print(json.dumps(pl.kl_from_files(args.p, args.q, args.topics), indent=2))
            return EXIT_OK
        stage = pl.stage_eval_kl(args.p, args.q, args.topics, args.out)
    elif cmd == "report":
        from .report import write_report
        print(write_report(args.workdir, args.manifest, args.metrics, figures=not args.no_figures), end="")
        return EXIT_OK
    elif cmd == "run-all":
        entries = pl.run_all(cfg, args.workdir, resume=args.resume, figures=not args.no_figures)
        for e in entries:
            flag = " (up to date)" if e.get("skipped") else ""
            print(f"{e['stage']:<16} {json.dumps(e.get('info', {}), sort_keys=True)}{flag}")
        return EXIT_OK
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(cmd)
    entry = pl.run_stage(stage, _manifest(args, next(iter(stage.outputs.values()))))
    print(json.dumps({"stage": entry["stage"], **entry["info"]}, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"kbfresh: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pl.DependencyError as exc:
        print(f"kbfresh: dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (pl.DataError, ValidationError, ConfigurationError, ValueError, KeyError,
            json.JSONDecodeError, OSError) as exc:
        print(f"kbfresh: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
