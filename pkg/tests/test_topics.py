import math

import numpy as np
import pytest

from kbfresh.topics import (
    ClusterModel, EmptyVocabularyError, assign_topic, build_vocabulary, choose_k, elbow_from_series,
    kmeans, load_topics, save_topics, sse, topic_token,
)

CORPUS = ["apple red", "apple red", "apple green", "red green", "kiwi", "lime"]


def blobs(rng, centers, per=15, spread=0.05):
    pts = [c + spread * rng.normal(size=(per, len(c))) for c in np.asarray(centers, float)]
    return np.vstack(pts)


class TestTfidf:
    def test_vocabulary_terms_and_idf(self):
        v = build_vocabulary(CORPUS)
        # kiwi/lime fail min_df; apple and red sit exactly on the 50% cap
        assert v.terms == ["apple", "green", "red"]
        assert v.idf == pytest.approx([math.log(7 / 4) + 1, math.log(7 / 3) + 1, math.log(7 / 4) + 1])

    def test_hand_computed_vectors(self):
        v = build_vocabulary(CORPUS)
        assert v.embed("apple green") == pytest.approx([0.6451024323, 0.7640961012, 0.0])
        assert v.embed("apple apple red") == pytest.approx([2 / math.sqrt(5), 0.0, 1 / math.sqrt(5)])

    def test_identical_documents_identical_vectors(self):
        v = build_vocabulary(CORPUS)
        assert np.array_equal(v.embed(CORPUS[0]), v.embed(CORPUS[1]))

    def test_ubiquitous_token_pruned(self):
        v = build_vocabulary(["the cat", "the dog", "the cat", "the dog"])
        assert "the" not in v.index

    def test_two_document_corpus_is_empty(self):
        # in {"a b", "a c"} every term is either in all docs or in just one
        with pytest.raises(EmptyVocabularyError):
            build_vocabulary(["a b", "a c"])

    def test_out_of_vocabulary_is_zero(self):
        assert not build_vocabulary(CORPUS).embed("nothing here").any()

    def test_topic_axes(self):
        v = build_vocabulary(CORPUS).with_topics(3)
        e = v.embed(topic_token(2))
        assert v.dim == 6 and e[v.index["topic_2"]] == 1.0 and e.sum() == 1.0
        assert v.with_topics(5).dim == 8


class TestSse:
    def test_zero_when_points_are_centroids(self):
        pts = np.array([[0.0], [2.0]])
        assert sse(pts, ClusterModel(pts.copy(), np.array([0, 1]))) == 0.0

    def test_one_cluster_two_points(self):
        pts = np.array([[0.0], [2.0]])
        assert sse(pts, ClusterModel(np.array([[1.0]]), np.array([0, 0]))) == 2.0

    def test_moving_a_point_increases(self):
        m = ClusterModel(np.array([[1.0]]), np.array([0, 0]))
        assert sse(np.array([[0.0], [2.5]]), m) > sse(np.array([[0.0], [2.0]]), m)


class TestKmeans:
    def test_k_equals_n(self):
        pts = np.array([[0.0], [1.0], [5.0]])
        m = kmeans(pts, 3, seed=0)
        assert sse(pts, m) == 0.0
        assert sorted(m.centroids.ravel()) == [0.0, 1.0, 5.0]

    def test_two_blobs(self):
        pts = np.array([[0.0], [0.1], [10.0], [10.1]])
        m = kmeans(pts, 2, seed=3)
        assert sorted(m.centroids.ravel()) == pytest.approx([0.05, 10.05])

    def test_deterministic(self, rng):
        pts = blobs(rng, [[0, 0], [4, 4], [0, 4]])
        a, b = kmeans(pts, 3, seed=5), kmeans(pts, 3, seed=5)
        assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.labels, b.labels)

    def test_input_order_does_not_matter(self, rng):
        pts = blobs(rng, [[0, 0], [4, 4], [0, 4]])
        perm = rng.permutation(len(pts))
        a, b = kmeans(pts, 3, seed=1), kmeans(pts[perm], 3, seed=1)
        assert np.array_equal(a.centroids, b.centroids)
        assert np.array_equal(a.labels[perm], b.labels)

    def test_sse_history_non_increasing(self, rng):
        pts = rng.normal(size=(200, 3))
        h = kmeans(pts, 6, seed=2).sse_history
        assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))

    def test_too_many_clusters(self):
        with pytest.raises(ValueError):
            kmeans(np.array([[1.0], [1.0]]), 2)

    def test_minibatch_close_to_full(self, rng):
        pts = blobs(rng, [[0, 0], [6, 6]], per=100)
        m = kmeans(pts, 2, seed=0, batch_size=20)
        assert sorted(m.centroids[:, 0]) == pytest.approx([0, 6], abs=0.1)


class TestElbow:
    def test_three_blobs(self, rng):
        pts = blobs(rng, [[0, 0], [10, 0], [0, 10]])
        k, series = choose_k(pts, (2, 8), seed=0)
        assert k == 3
        assert [s[0] for s in series] == list(range(2, 9))

    def test_linear_series_ties_to_smallest_interior_k(self):
        assert elbow_from_series([(2, 10.0), (3, 8.0), (4, 6.0), (5, 4.0)]) == 3

    def test_range_too_small(self, rng):
        with pytest.raises(ValueError):
            choose_k(rng.normal(size=(10, 2)), (2, 3))


class TestAssignTopic:
    CENTROIDS = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [3.0, 3.0], [-1.0, 0.0]])

    def model(self):
        return ClusterModel(self.CENTROIDS, np.zeros(0, dtype=int))

    def test_equal_to_centroid(self):
        assert assign_topic(self.CENTROIDS[3], self.model()) == 3

    def test_tie_goes_to_smaller_index(self):
        # centroids (1, 0) and (-1, 0); the origin is equidistant
        m =ClusterModel(self.CENTROIDS[[1, 4]], np.zeros(0, dtype=int))
        assert assign_topic(np.array([0.0, 0.0]), m) == 0

    def test_matches_brute_force(self, rng):
        m = self.model()
        for e in rng.normal(scale=3, size=(200, 2)):
            d = [float(np.sum((e - c) ** 2)) for c in self.CENTROIDS]
            assert assign_topic(e, m) == d.index(min(d))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            assign_topic(np.zeros(3), self.model())


def test_topics_round_trip(tmp_path):
    save_topics({"Q1": 0, "Q2": 3}, tmp_path / "t.jsonl")
    assert load_topics(tmp_path / "t.jsonl") == {"Q1": 0, "Q2": 3}
