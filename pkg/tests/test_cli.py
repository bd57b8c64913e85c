import json
import shutil

import pytest

from kbfresh import cli
from kbfresh.encyc import DumpSource
from kbfresh.metrics import METRIC_KEYS
from kbfresh.pipeline import ARTIFACTS, file_hash, read_manifest
from kbfresh.report import write_report
from kbfresh.stubserver import serve_dump
from kbfresh.synthetic import FIXTURE_DIR

CFG = FIXTURE_DIR / "run.cfg"


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    assert cli.main(["run-all", "--fixture", "--workdir", str(wd)]) == 0
    return wd


class TestExitCodes:
    def test_train_before_build_graphs(self, tmp_path, capsys):
        code = cli.main(["train", "--graphs", str(tmp_path / "graphs.jsonl"),
                         "--out", str(tmp_path / "m.json"), "--curves", str(tmp_path / "c.csv")])
        assert code == 3
        assert "build-graphs" in capsys.readouterr().err

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["topics", "--k", "3"])
        assert exc.value.code == 1

    def test_bad_k_value(self, tmp_path):
        code = cli.main(["topics", "--config", str(CFG), "--k", "many",
                         "--out", str(tmp_path / "t.jsonl"), "--sse-csv", str(tmp_path / "s.csv")])
        assert code == 1

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        code = cli.main(["run-all", "--config", str(cfg), "--workdir", str(tmp_path / "w")])
        assert code == 1

    def test_corrupt_graph_store_is_data_error(self, tmp_path):
        g = tmp_path / "graphs.jsonl"
        g.write_text('{"f": 3, "version": 1}\n{"broken": true}\n')
        code = cli.main(["train", "--graphs", str(g), "--out", str(tmp_path / "m.json"),
                         "--curves", str(tmp_path / "c.csv")])
        assert code == 2


class TestRunAll:
    def test_all_artifacts(self, run):
        for name in ARTIFACTS.values():
            assert (run / name).exists(), name
        for name in ("report.md", "sse.png", "curves.png", "attributes.png", "attributes.csv"):
            assert (run / name).exists(), name

    def test_report_has_every_metric(self, run):
        text = (run / "report.md").read_text()
        for key in METRIC_KEYS:
            assert f"| {key} |" in text
        assert "MISSING" not in text
        metrics = json.loads((run / "metrics.json").read_text())
        assert set(METRIC_KEYS) <= set(metrics)

    def test_curves_rows_equal_epochs(self, run):
        epochs = int(next(ln.split("=")[1] for ln in CFG.read_text().splitlines()
                          if ln.startswith("epochs")))
        assert len((run / "curves.csv").read_text().splitlines()) == epochs + 1

    def test_manifest_entries(self, run):
        stages = [e["stage"] for e in read_manifest(run / "manifest.jsonl")]
        assert stages[0] == "extract-seeds" and stages[-1] == "sync" and len(stages) == 11

    def test_resume_skips_everything(self, run, tmp_path, capsys):
        wd = tmp_path / "copy"
        shutil.copytree(run, wd)
        before = {p.name: file_hash(p) for p in wd.iterdir() if p.suffix != ".md"}
        assert cli.main(["run-all", "--fixture", "--workdir", str(wd), "--resume"]) == 0
        out = capsys.readouterr().out
        assert out.count("(up to date)") == 11
        after = {p.name: file_hash(p) for p in wd.iterdir() if p.suffix != ".md"}
        assert {k: v for k, v in after.items() if k != "manifest.jsonl"} == \
            {k: v for k, v in before.items() if k != "manifest.jsonl"}

    def test_missing_metrics_gives_gaps(self, run, tmp_path):
        wd = tmp_path / "partial"
        shutil.copytree(run, wd)
        (wd / "metrics.json").unlink()
        text = write_report(wd, figures=False)
        assert "| mse | MISSING |" in text
        assert "metrics file metrics.json" in text.split("## Gaps")[1]


class TestSingleStages:
    def test_stage_output_matches_run_all(self, run, tmp_path):
        out = tmp_path / "seeds.jsonl"
        assert cli.main(["extract-seeds", "--config", str(CFG), "--out", str(out)]) == 0
        assert file_hash(out) == file_hash(run / "seeds.jsonl")

    def test_rerun_is_identical(self, tmp_path):
        outs = []
        for i in range(2):
            t, s = tmp_path / f"t{i}.jsonl", tmp_path / f"s{i}.csv"
            assert cli.main(["topics", "--config", str(CFG), "--out", str(t), "--sse-csv", str(s)]) == 0
            outs.append((file_hash(t), file_hash(s)))
        assert outs[0] == outs[1]

    def test_http_source_builds_same_graphs(self, run, tmp_path):
        srv = serve_dump(DumpSource(FIXTURE_DIR / "dump.jsonl"))
        try:
            out = tmp_path / "graphs.jsonl"
            code = cli.main(["build-graphs", "--config", str(CFG), "--source", srv.url,
                             "--seeds", str(run / "seeds.jsonl"), "--topics", str(run / "topics.jsonl"),
                             "--vocab", str(run / "topics.vocab.json"), "--out", str(out)])
        finally:
            srv.shutdown()
        assert code == 0
        assert file_hash(out) == file_hash(run / "graphs.jsonl")

    def test_eval_kl_prints_without_out(self, run, capsys):
        assert cli.main(["eval-kl", "--p", str(run / "seeds.jsonl"), "--q", str(run / "preds.jsonl"),
                         "--topics", str(run / "topics.jsonl")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["kl_bits"] == json.loads((run / "kl.json").read_text())["kl_bits"]

    def test_sync_dry_run_leaves_kb(self, run, tmp_path):
        out = tmp_path / "kb_out.jsonl"
        code = cli.main(["sync", "--config", str(CFG), "--preds", str(run / "preds.jsonl"),
                         "--dry-run", "--report", str(tmp_path / "r.jsonl"), "--out", str(out)])
        assert code == 0
        src = [json.loads(x) for x in (FIXTURE_DIR / "kb.jsonl").read_text().splitlines()]
        got = [json.loads(x) for x in out.read_text().splitlines()]
        assert got == src
