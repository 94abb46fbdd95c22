import numpy as np
import pytest
from helpers import ring_fixture
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

import hae.autodiff as ad
from hae.autodiff import RngStream
from hae.errors import ConfigError, DataError
from hae.hin import LabelSplit, SyntheticConfig, generate_synthetic_hin, split_labels
from hae.layers import DEFAULT_STRUCTURES, ModelConfig, build_graph_inputs, build_stack, model_forward
from hae.train_eval import (
    TrainConfig,
    clustering_scores,
    evaluate_embeddings,
    extract_embeddings,
    kmeans,
    logistic_probe,
    macro_micro_f1,
    train,
)


def separable_setup(seed=31):
    cfg = SyntheticConfig(
        communities=2, authors=60, papers=150, venues=4, terms=40,
        cross_community_noise=0.0, feature_dim=16, feature_noise=0.05, seed=seed,
    )
    g = generate_synthetic_hin(cfg)
    inputs = build_graph_inputs(g, DEFAULT_STRUCTURES)
    split = split_labels(g, 0.6, 0.2, seed=seed)
    return g, inputs, split


def small_stack(inputs, n_classes, seed, variant="gnn-2l", dim=16, heads=2):
    cfg = ModelConfig(variant=variant, dim=dim, heads=heads)
    return build_stack(cfg, inputs.features.shape[1], n_classes, len(inputs.sims), RngStream(seed))


class TestTrain:
    def test_separable_two_communities(self):
        g, inputs, split = separable_setup()
        stack = small_stack(inputs, 2, seed=32)
        stack, report = train(
            stack, inputs, g.labels, split, TrainConfig(seed=32, epochs=500, patience=500)
        )
        assert report.train_loss[-1] < report.train_loss[0]
        assert max(f for f in report.val_macro_f1 if f is not None) > 0.9

    def test_epoch0_loss_matches_sum_convention(self):
        g, inputs, split = separable_setup(seed=33)
        stack = small_stack(inputs, 2, seed=33, dim=64, heads=8)
        _, report = train(stack, inputs, g.labels, split, TrainConfig(seed=33, epochs=1, patience=1))
        expected = len(split.train_ids) * np.log(2)
        assert report.train_loss[0] == pytest.approx(expected, rel=0.2)

    def test_zero_epochs_forbidden(self):
        g, inputs, split = separable_setup(seed=34)
        stack = small_stack(inputs, 2, seed=34)
        with pytest.raises(ConfigError, match="epochs"):
            train(stack, inputs, g.labels, split, TrainConfig(epochs=0))

    def test_deterministic_reports(self):
        g, inputs, split = separable_setup(seed=35)
        cfg = TrainConfig(seed=35, epochs=12, patience=12)
        _, r1 = train(small_stack(inputs, 2, seed=35), inputs, g.labels, split, cfg)
        _, r2 = train(small_stack(inputs, 2, seed=35), inputs, g.labels, split, cfg)
        assert r1.to_json_dict() == r2.to_json_dict()

    def test_early_stopping_restores_best(self):
        g, inputs, split = separable_setup(seed=36)
        stack = small_stack(inputs, 2, seed=36)
        stack, report = train(stack, inputs, g.labels, split, TrainConfig(seed=36, epochs=60, patience=5))
        one_hot = np.zeros((inputs.n_nodes, 2))
        one_hot[np.arange(inputs.n_nodes), g.labels] = 1.0
        _, logits = model_forward(stack, inputs, training=False)
        restored = ad.cross_entropy_loss(logits, one_hot, split.val_ids).item()
        best = min(v for v in report.val_loss if v is not None)
        assert restored == pytest.approx(best, rel=1e-9)

    def test_empty_train_split_rejected(self):
        g, inputs, split = separable_setup(seed=37)
        stack = small_stack(inputs, 2, seed=37)
        empty = LabelSplit(np.array([], dtype=np.int64), split.val_ids, split.test_ids, 0.0)
        with pytest.raises(DataError, match="empty"):
            train(stack, inputs, g.labels, empty, TrainConfig())


class TestExtractEmbeddings:
    def test_bit_deterministic(self):
        g, inputs, _ = separable_setup(seed=38)
        stack = small_stack(inputs, 2, seed=38)
        np.testing.assert_array_equal(
            extract_embeddings(stack, inputs), extract_embeddings(stack, inputs)
        )

    def test_untrained_still_finite(self):
        g, inputs, _ = separable_setup(seed=39)
        stack = small_stack(inputs, 2, seed=39)
        assert np.all(np.isfinite(extract_embeddings(stack, inputs)))

    def test_default_dim_64(self):
        g = ring_fixture(n=12, feature_dim=10, seed=40)
        inputs = build_graph_inputs(g, DEFAULT_STRUCTURES)
        stack = build_stack(ModelConfig(variant="gnn-2l"), 10, 2, 4, RngStream(41))
        assert extract_embeddings(stack, inputs).shape == (12, 64)


class TestLogisticProbe:
    def test_linearly_separable(self):
        rng = RngStream(42)
        emb = np.vstack([rng.uniform(1, 2, (30, 4)), rng.uniform(-2, -1, (30, 4))])
        labels = np.array([0] * 30 + [1] * 30)
        train_ids = np.arange(0, 60, 2)
        eval_ids = np.arange(1, 60, 2)
        preds = logistic_probe(emb, train_ids, labels[train_ids], eval_ids, seed=1)
        assert np.array_equal(preds, labels[eval_ids])

    def test_chance_level_on_random_labels(self):
        rng = RngStream(43)
        emb = rng.uniform(-1, 1, (200, 8))
        accs = []
        for seed in range(20):
            labels = RngStream(seed).integers(4, size=200)
            train_ids = np.arange(100)
            eval_ids = np.arange(100, 200)
            preds = logistic_probe(emb, train_ids, labels[train_ids], eval_ids, seed=seed)
            accs.append(np.mean(preds == labels[eval_ids]))
        assert abs(np.mean(accs) - 0.25) < 0.05

    def test_single_class_rejected(self):
        emb = np.ones((10, 3))
        with pytest.raises(DataError, match="single class"):
            logistic_probe(emb, np.arange(5), np.zeros(5, dtype=int), np.arange(5, 10))

    def test_never_sees_heldout_labels(self):
        import inspect

        sig = inspect.signature(logistic_probe)
        assert "train_labels" in sig.parameters
        assert not any("eval_label" in p or "test_label" in p for p in sig.parameters)


class TestF1:
    def test_perfect(self):
        assert macro_micro_f1([0, 1, 2], [0, 1, 2]) == (1.0, 1.0)

    def test_hand_case(self):
        macro, micro = macro_micro_f1([0, 0, 1], [0, 1, 1])
        assert macro == pytest.approx(2 / 3)
        assert micro == pytest.approx(2 / 3)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_micro_equals_accuracy(self, seed):
        rng = RngStream(seed)
        y = np.asarray(rng.integers(5, size=40))
        p = np.asarray(rng.integers(5, size=40))
        _, micro = macro_micro_f1(y, p)
        assert micro == np.mean(y == p)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_matches_sklearn(self, seed):
        rng = RngStream(seed)
        y = np.asarray(rng.integers(4, size=50))
        p = np.asarray(rng.integers(4, size=50))
        macro, micro = macro_micro_f1(y, p)
        assert macro == pytest.approx(skm.f1_score(y, p, average="macro"), abs=1e-12)
        assert micro == pytest.approx(skm.f1_score(y, p, average="micro"), abs=1e-12)

    def test_permutation_of_class_ids(self):
        y = np.array([0, 0, 1, 2, 2, 1])
        p = np.array([0, 1, 1, 2, 0, 1])
        swap = {0: 2, 1: 0, 2: 1}
        y2 = np.array([swap[v] for v in y])
        p2 = np.array([swap[v] for v in p])
        assert macro_micro_f1(y, p) == macro_micro_f1(y2, p2)

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            macro_micro_f1([0, 1], [0])


class TestKmeans:
    def test_two_blobs(self):
        rng = RngStream(44)
        emb = np.vstack([rng.uniform(9, 10, (20, 3)), rng.uniform(-10, -9, (20, 3))])
        assign = kmeans(emb, 2, seed=0)
        assert len(set(assign[:20].tolist())) == 1
        assert len(set(assign[20:].tolist())) == 1
        assert assign[0] != assign[-1]

    def test_k_equals_n(self):
        rng = RngStream(45)
        emb = rng.uniform(-1, 1, (6, 2))
        assign = kmeans(emb, 6, seed=0)
        assert sorted(assign.tolist()) == list(range(6))

    def test_deterministic(self):
        rng = RngStream(46)
        emb = rng.uniform(-1, 1, (40, 4))
        np.testing.assert_array_equal(kmeans(emb, 3, seed=9), kmeans(emb, 3, seed=9))

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            kmeans(np.ones((4, 2)), 5, seed=0)
        with pytest.raises(ConfigError):
            kmeans(np.ones((4, 2)), 0, seed=0)


class TestClusteringScores:
    def test_identity_exactly_one(self):
        y = np.array([0, 0, 1, 1, 2, 2, 2])
        assert clustering_scores(y, y) == (1.0, 1.0, 1.0)

    def test_relabeling_exactly_one(self):
        y = np.array([0, 0, 1, 1, 2, 2, 2])
        relabeled = np.array([5, 5, 9, 9, 1, 1, 1])
        assert clustering_scores(y, relabeled) == (1.0, 1.0, 1.0)

    def test_single_cluster_zero_nmi(self):
        nmi, _, _ = clustering_scores([0, 1, 0, 1], [0, 0, 0, 0])
        assert nmi == 0.0

    def test_ari_negative_boundary(self):
        _, ari, _ = clustering_scores([0, 0, 1, 1], [0, 1, 0, 1])
        assert ari == -0.5

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_matches_sklearn(self, seed):
        rng = RngStream(seed)
        y = np.asarray(rng.integers(4, size=60))
        p = np.asarray(rng.integers(3, size=60))
        nmi, ari, fmi = clustering_scores(y, p)
        assert nmi == pytest.approx(skm.normalized_mutual_info_score(y, p), abs=1e-9)
        assert ari == pytest.approx(skm.adjusted_rand_score(y, p), abs=1e-9)
        assert fmi == pytest.approx(skm.fowlkes_mallows_score(y, p), abs=1e-9)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_ranges(self, seed):
        rng = RngStream(seed)
        y = np.asarray(rng.integers(5, size=30))
        p = np.asarray(rng.integers(5, size=30))
        nmi, ari, fmi = clustering_scores(y, p)
        assert 0.0 <= nmi <= 1.0
        assert -1.0 <= ari <= 1.0
        assert 0.0 <= fmi <= 1.0


class TestEvaluateEmbeddings:
    def test_metric_keys_and_sane_values(self):
        g, inputs, _ = separable_setup(seed=47)
        split = split_labels(g, 0.5, 0.0, seed=47)
        out = evaluate_embeddings(g.features["A"], g.labels, split, seed=47)
        assert sorted(out) == ["ari", "fmi", "macro_f1", "micro_f1", "nmi"]
        assert out["macro_f1"] > 0.9  # nearly separable features
