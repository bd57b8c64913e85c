import numpy as np
import pytest

from kbfresh.encyc import DumpSource, LabelWindow, label_entity
from kbfresh.graphs import (
    BuildAbortedError, GraphBuildConfig, attribute_histogram, build_dataset, build_graph,
)
from kbfresh.ingest import SeedEntity
from kbfresh.kb import CENTER, TOPIC, VALUE
from kbfresh.topics import build_vocabulary

from conftest import make_entity, write_jsonl

WINDOW = LabelWindow.parse("2023-07-01..2023-08-01")
TEXTS = ["born in paris", "born in rome", "pilot from rome", "pilot from paris", "x", "y"]


@pytest.fixture
def config():
    return GraphBuildConfig(build_vocabulary(TEXTS).with_topics(8))


def seed(eid, name):
    return SeedEntity(eid, name, name.lower(), 1, 0)


class TestBuildGraph:
    def test_two_triples_star(self, config):
        e = make_entity("Q1", "Alice", [("born", "paris"), ("job", "pilot")], "born in paris")
        g = build_graph(e, 5, 1, config)
        assert g.n == 4
        assert g.roles == (CENTER, TOPIC, VALUE, VALUE)
        expect = np.array([[0, 1, 1, 1], [1, 0, 0, 0], [1, 0, 0, 0], [1, 0, 0, 0]])
        assert np.array_equal(g.adjacency, expect)
        assert g.features[1, config.vocabulary.index["topic_5"]] == 1.0
        assert g.edge_labels == {(0, 1): "topic", (0, 2): "born", (0, 3): "job"}

    def test_no_triples(self, config):
        g = build_graph(make_entity("Q1", "Alice", summary="pilot"), 0, 0, config)
        assert g.n == 2 and g.roles == (CENTER, TOPIC)

    def test_duplicate_triples_collapse(self, config):
        e = make_entity("Q1", "Alice", [("born", "paris"), ("born", "paris")], "s")
        assert build_graph(e, 0, 0, config).n == 3

    def test_topic_feature_off_keeps_structure(self):
        cfg = GraphBuildConfig(build_vocabulary(TEXTS).with_topics(8), include_topic_node=False)
        g = build_graph(make_entity("Q1", "Alice", [("born", "rome")], "born"), 5, 0, cfg)
        assert g.n == 3 and not g.features[1].any()

    def test_unknown_topic(self, config):
        with pytest.raises(ValueError):
            build_graph(make_entity("Q1", "A", summary="pilot"), 99, 0, config)


class TestHistogram:
    def test_shared_edge(self, config):
        gs = [build_graph(make_entity(f"Q{i}", f"E{i}", [("birth", "paris")], "s"), 0, 0, config)
              for i in range(2)]
        assert attribute_histogram(gs) == [("birth", 2)]

    def test_empty(self):
        assert attribute_histogram([]) == []


class TestBuildDataset:
    @pytest.fixture
    def source(self, tmp_path):
        return DumpSource(write_jsonl(tmp_path / "dump.jsonl", [
            {"id": "W1", "name": "Alice", "summary": "pilot from paris", "triples": [["job", "pilot"]],
             "revisions": ["2023-07-10T00:00:00Z"]},
            {"id": "W2", "name": "Bob", "summary": "born in rome", "triples": [["born", "rome"]],
             "revisions": ["2023-07-01T00:00:00Z"]},
            {"id": "W3", "name": "Carol", "summary": "born in paris", "triples": [],
             "revisions": ["2023-08-01T00:00:00Z", "2023-05-01T00:00:00Z"]},
        ]))

    def test_all_fetchable(self, source, config):
        seeds = [seed("Q1", "Alice"), seed("Q2", "Bob"), seed("Q3", "Carol")]
        gs = build_dataset(seeds, source, {"Q1": 0, "Q2": 1, "Q3": 2}, WINDOW, config)
        assert [g.entity_id for g in gs] == ["Q1", "Q2", "Q3"]

    def test_labels_follow_label_entity(self, source, config):
        seeds = [seed("Q1", "Alice"), seed("Q2", "Bob"), seed("Q3", "Carol")]
        gs = build_dataset(seeds, source, {"Q1": 0, "Q2": 1, "Q3": 2}, WINDOW, config)
        direct = [label_entity(source.fetch_revisions(s.name, WINDOW), WINDOW) for s in seeds]
        assert [g.label for g in gs] == direct == [1, 0, 1]

    def test_one_failure_skipped(self, source, config, caplog):
        seeds = [seed("Q1", "Alice"), seed("Q2", "Bob"), seed("Q9", "Nobody")]
        cfg = GraphBuildConfig(config.vocabulary, max_failure_rate=0.5)
        gs = build_dataset(seeds, source, {"Q1": 0, "Q2": 1, "Q9": 2}, WINDOW, cfg)
        assert len(gs) == 2
        assert "Q9" in caplog.text

    def test_abort_above_failure_rate(self, source, config):
        seeds = [seed("Q1", "Alice"), seed("Q8", "Nobody"), seed("Q9", "Noone")]
        with pytest.raises(BuildAbortedError):
            build_dataset(seeds, source, {"Q1": 0, "Q8": 1, "Q9": 2}, WINDOW, config)

    def test_missing_topic(self, source, config):
        with pytest.raises(KeyError):
            build_dataset([seed("Q1", "Alice")], source, {}, WINDOW, config)

    def test_parallel_matches_serial(self, source, config):
        seeds = [seed("Q1", "Alice"), seed("Q2", "Bob"), seed("Q3", "Carol")]
        topics = {"Q1": 0, "Q2": 1, "Q3": 2}
        par = GraphBuildConfig(config.vocabulary, parallelism=3)
        assert build_dataset(seeds, source, topics, WINDOW, config) == \
            build_dataset(seeds, source, topics, WINDOW, par)
