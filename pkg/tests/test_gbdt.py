import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import log_loss

from pickrank import oracles
from pickrank.constants import DESK_TREE_COUNTS, ENSEMBLE_DEPTH, ENSEMBLE_LEARNING_RATE
from pickrank.errors import DegenerateLabels, EmptyDataset, EmptyEnsemble, FeatureMismatch, NoSplits
from pickrank.gbdt import (
    GbdtEnsemble,
    GbdtModel,
    GbdtParams,
    Tree,
    bin_edges,
    feature_importance,
    logloss,
    predict,
    predict_ensemble,
    train,
    train_ensemble,
)

XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float)
XOR_Y = np.array([0, 1, 1, 0], float)
TWO = ("f0", "f1")


def names(k):
    return tuple(f"f{i}" for i in range(k))


def constant(p, feature_names=TWO):
    logit = math.inf if p == 1 else math.log(p / (1 - p))
    return GbdtModel(logit, [], GbdtParams(n_trees=0), feature_names)


def noisy_threshold_data(n=400, k=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, k))
    y = (X[:, 0] > 0.5).astype(float)
    return X, y


class TestTrainer:
    def test_zero_learning_rate_gives_label_mean(self):
        X, y = noisy_threshold_data()
        y[:50] = 1 - y[:50]
        m = train(X, y, GbdtParams(n_trees=20, learning_rate=0.0), names(4))
        assert np.allclose(m.predict_proba(X), y.mean())

    def test_xor_depth_two(self):
        # four points need single-sample leaves
        m = train(XOR_X, XOR_Y, GbdtParams(n_trees=50, depth=2, min_samples_leaf=1), TWO)
        assert np.array_equal((m.predict_proba(XOR_X) > 0.5).astype(float), XOR_Y)

    def test_depth_one_split_matches_exhaustive(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(8, 2))
        y = np.array([0, 1, 0, 1, 1, 1, 0, 0], float)
        m = train(X, y, GbdtParams(n_trees=1, depth=1, learning_rate=1.0, min_samples_leaf=1), TWO)
        g = 1 / (1 + math.exp(-m.base_score)) - y
        f, t, _ = oracles.exhaustive_split(X, g, min_leaf=1)
        assert (m.trees[0].feature[0], m.trees[0].threshold[0]) == (f, t)

    def test_all_ones_when_allowed(self):
        X = np.random.default_rng(0).random((30, 2))
        with pytest.raises(DegenerateLabels):
            train(X, np.ones(30), GbdtParams(n_trees=100), TWO)
        m = train(X, np.ones(30), GbdtParams(n_trees=100), TWO, require_both_classes=False)
        assert m.predict_proba(X).min() >= 0.95

    def test_input_errors(self):
        with pytest.raises(EmptyDataset):
            train(np.zeros((0, 2)), np.zeros(0), GbdtParams(), TWO)
        with pytest.raises(FeatureMismatch):
            train(np.zeros((4, 3)), XOR_Y, GbdtParams(), TWO)
        with pytest.raises(ValueError):
            GbdtParams(depth=0)

    def test_loss_matches_sklearn(self):
        X, y = noisy_threshold_data(seed=3)
        y[::7] = 1 - y[::7]
        m = train(X, y, GbdtParams(n_trees=30), names(4))
        assert m.train_loss[-1] == pytest.approx(log_loss(y, m.predict_proba(X)), rel=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 6), st.sampled_from([0.05, 0.3, 1.0]))
    def test_full_data_loss_never_increases(self, seed, depth, lr):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(120, 3))
        y = (X[:, 0] + 0.5 * rng.normal(size=120) > 0).astype(float)
        y[:2] = [0, 1]
        m = train(X, y, GbdtParams(n_trees=25, depth=depth, learning_rate=lr), names(3))
        assert all(b <= a + 1e-12 for a, b in zip(m.train_loss, m.train_loss[1:]))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_tree_depth_bounded(self, seed):
        X, y = noisy_threshold_data(n=200, seed=seed)
        y[::5] = 1 - y[::5]
        m = train(X, y, GbdtParams(n_trees=5, depth=3), names(4))
        assert all(t.depth <= 3 for t in m.trees)

    def test_bin_edges(self):
        assert bin_edges(np.array([3.0, 1.0, 2.0, 2.0]), 256).tolist() == [1.5, 2.5]
        many = bin_edges(np.arange(1000.0), 16)
        assert len(many) <= 15 and np.all(np.diff(many) > 0)


class TestPredict:
    def test_zero_tree_model(self):
        assert predict(GbdtModel(0.0, [], GbdtParams(n_trees=0), TWO), [3.0, 4.0]) == 0.5

    def test_zero_leaf_tree_is_identity(self):
        X, y = noisy_threshold_data()
        y[::9] = 1 - y[::9]
        m = train(X, y, GbdtParams(n_trees=10), names(4))
        t = Tree()
        root = t.add(feature=1, threshold=0.5)
        t.left[root] = t.add(value=0.0)
        t.right[root] = t.add(value=0.0)
        padded = GbdtModel(m.base_score, m.trees + [t], m.params, m.feature_names)
        assert np.array_equal(padded.predict_proba(X), m.predict_proba(X))

    def test_single_row_matches_batch(self):
        X, y = noisy_threshold_data()
        y[::9] = 1 - y[::9]
        m = train(X, y, GbdtParams(n_trees=10), names(4))
        batch = m.predict_proba(X[:20])
        assert [predict(m, x) for x in X[:20]] == pytest.approx(batch.tolist(), abs=0)

    def test_wrong_width(self):
        m = GbdtModel(0.0, [], GbdtParams(n_trees=0), TWO)
        with pytest.raises(FeatureMismatch):
            m.predict_proba(np.zeros((3, 5)))

    def test_text_round_trip(self, tmp_path):
        X, y = noisy_threshold_data(seed=4)
        y[::6] = 1 - y[::6]
        m = train(X, y, GbdtParams(n_trees=15, depth=4), names(4))
        m.save(tmp_path / "m.jsonl")
        m2 = GbdtModel.load(tmp_path / "m.jsonl")
        assert np.array_equal(m2.predict_proba(X), m.predict_proba(X))
        assert m2.to_text() == m.to_text()


class TestEnsemble:
    def test_identical_members(self):
        m = constant(0.3)
        x = np.zeros((4, 2))
        assert np.array_equal(GbdtEnsemble([m] * 5, TWO).predict_proba(x), m.predict_proba(x))

    def test_mean_of_members(self):
        e = GbdtEnsemble([constant(p) for p in (0.2, 0.4, 0.6, 0.8, 1.0)], TWO)
        assert predict_ensemble(e, [0.0, 0.0]) == pytest.approx(0.6, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyEnsemble):
            GbdtEnsemble([], TWO).predict_proba(np.zeros((1, 2)))

    def test_mean_of_individual_calls(self):
        X, y = noisy_threshold_data(seed=5)
        y[::4] = 1 - y[::4]
        e = train_ensemble(X, y, GbdtParams(subsample=0.8, depth=3), (5, 7, 9), (1, 2, 3), names(4))
        Z = np.random.default_rng(1).random((25, 4))
        ref = np.mean([[predict(m, z) for z in Z] for m in e.members], axis=0)
        assert np.allclose(e.predict_proba(Z), ref, rtol=0, atol=1e-15)

    def test_desk_defaults(self):
        assert DESK_TREE_COUNTS == (224, 107, 80, 146, 121)
        assert (ENSEMBLE_DEPTH, ENSEMBLE_LEARNING_RATE) == (6, 0.05)

    def test_single_member_is_train(self):
        X, y = noisy_threshold_data(seed=6)
        y[::3] = 1 - y[::3]
        p = GbdtParams(subsample=0.8, depth=3)
        e = train_ensemble(X, y, p, (12,), (7,), names(4))
        m = train(X, y, GbdtParams(n_trees=12, depth=3, subsample=0.8, seed=7), names(4))
        assert np.array_equal(e.predict_proba(X), m.predict_proba(X))

    def test_deterministic_bytes(self, tmp_path):
        X, y = noisy_threshold_data(seed=7)
        y[::3] = 1 - y[::3]
        for d in ("a", "b"):
            train_ensemble(X, y, GbdtParams(subsample=0.8, depth=3), (6, 4), (1, 2), names(4)).save(tmp_path / d)
        for f in ("ensemble.json", "member_0.jsonl", "member_1.jsonl"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


class TestImportance:
    def test_threshold_feature_dominates(self):
        X, y = noisy_threshold_data(n=1000, k=5, seed=2)
        imp = feature_importance(train(X, y, GbdtParams(n_trees=30, depth=3), names(5)))
        assert imp[0] > 0.9

    def test_single_split(self):
        X, y = noisy_threshold_data(n=100, k=3)
        imp = feature_importance(train(X, y, GbdtParams(n_trees=1, depth=1), names(3)))
        assert imp == {0: 1.0, 1: 0.0, 2: 0.0}

    def test_no_splits(self):
        with pytest.raises(NoSplits):
            feature_importance(GbdtModel(0.0, [], GbdtParams(n_trees=0), TWO))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_normalised(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(150, 4))
        y = (rng.random(150) < 0.5).astype(float)
        y[:2] = [0, 1]
        imp = feature_importance(train(X, y, GbdtParams(n_trees=8, depth=3), names(4)))
        assert all(v >= 0 for v in imp.values()) and abs(sum(imp.values()) - 1) < 1e-9


def test_logloss_matches_sklearn():
    rng = np.random.default_rng(0)
    y = (rng.random(50) < 0.4).astype(float)
    p = rng.uniform(0.01, 0.99, 50)
    assert logloss(y, p) == pytest.approx(log_loss(y, p), rel=1e-12)
