import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfosr.dataset import Dataset
from rfosr.errors import DataError
from rfosr.forest import (ForestConfig, ForestGrid, OOB_ABSTAIN, fit_forest,
                          fit_tree, forest_from_arrays, forest_to_arrays,
                          grid_search_cv, oob_predict, oob_predict_filled,
                          stratified_folds)
from conftest import make_dataset


def gini_of(labels, weights):
    total = weights.sum()
    p = np.array([weights[labels == c].sum() for c in np.unique(labels)]) / total
    return 1.0 - np.sum(p ** 2)


def brute_force_best_split(X, y, mult):
    """Enumerate every (feature, midpoint) split; weighted Gini oracle."""
    mask = mult > 0
    Xv, yv, mv = X[mask], y[mask], mult[mask].astype(float)
    total = mv.sum()
    best = (np.inf, None, None)
    for f in range(X.shape[1]):
        vals = np.unique(Xv[:, f])
        for a, b in zip(vals[:-1], vals[1:]):
            thr = (a + b) / 2
            left = Xv[:, f] <= thr
            wl, wr = mv[left].sum(), mv[~left].sum()
            imp = (wl * gini_of(yv[left], mv[left])
                   + wr * gini_of(yv[~left], mv[~left])) / total
            if imp < best[0] - 1e-15:
                best = (imp, f, thr)
    return best


class TestFitTree:
    def test_single_inbag_sample_is_leaf(self):
        X = np.array([[0.0], [1.0], [2.0]])
        y = np.array([1, 2, 2])
        mult = np.array([0, 3, 0])
        tree = fit_tree(X, y, mult, ForestConfig(max_features="all"), seed=0,
                        n_classes=2)
        assert tree.n_nodes == 1
        assert tree.predict(X)[0] == 2

    def test_1d_separable_root_split(self):
        X = np.array([[0.0], [1.0], [10.0], [11.0]])
        y = np.array([1, 1, 2, 2])
        mult = np.ones(4, dtype=int)
        tree = fit_tree(X, y, mult, ForestConfig(max_features="all"), seed=0,
                        n_classes=2)
        _, f, thr = brute_force_best_split(X, y, mult)
        assert 1.0 < tree.threshold[0] < 10.0
        assert tree.threshold[0] == pytest.approx(thr)
        assert tree.feature[0] == f
        leaves = tree.class_counts[tree.feature == -1]
        assert all((row > 0).sum() == 1 for row in leaves)

    def test_pure_labels_single_leaf(self):
        X = np.random.default_rng(0).normal(0, 1, (20, 3))
        y = np.full(20, 2)
        tree = fit_tree(X, y, np.ones(20, dtype=int),
                        ForestConfig(max_features="all"), seed=0, n_classes=2)
        assert tree.n_nodes == 1

    @pytest.mark.parametrize("seed", range(8))
    def test_root_split_matches_exhaustive_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        X = rng.normal(0, 1, (n, 2)).round(2)
        y = rng.integers(1, 3, n)
        if len(np.unique(y)) < 2:
            y[0] = 1
            y[1] = 2
        mult = rng.integers(1, 3, n)
        tree = fit_tree(X, y, mult, ForestConfig(max_features="all"),
                        seed=seed, n_classes=2)
        imp, f, thr = brute_force_best_split(X, y, mult)
        if tree.n_nodes == 1:
            # no improving split existed
            assert f is None or imp >= gini_of(y, mult.astype(float)) - 1e-12
        else:
            assert tree.feature[0] == f
            assert tree.threshold[0] == pytest.approx(thr)

    def test_all_multiplicities_zero_rejected(self):
        with pytest.raises(DataError, match="in-bag"):
            fit_tree(np.zeros((3, 1)), np.array([1, 1, 2]),
                     np.zeros(3, dtype=int), ForestConfig(), seed=0)

    def test_max_depth_one_gives_single_split(self, two_blobs):
        tree = fit_tree(two_blobs.features, two_blobs.labels,
                        np.ones(two_blobs.n_samples, dtype=int),
                        ForestConfig(max_depth=1, max_features="all"), seed=0,
                        n_classes=2)
        assert tree.n_nodes == 3


class TestForest:
    def test_deterministic_given_seed(self, two_blobs):
        cfg = ForestConfig(n_trees=10, seed=99)
        f1 = fit_forest(two_blobs, cfg)
        f2 = fit_forest(two_blobs, cfg)
        for t1, t2 in zip(f1.trees, f2.trees):
            np.testing.assert_array_equal(t1.feature, t2.feature)
            np.testing.assert_array_equal(t1.threshold, t2.threshold)
            np.testing.assert_array_equal(t1.class_counts, t2.class_counts)
        np.testing.assert_array_equal(f1.bootstrap.multiplicities,
                                      f2.bootstrap.multiplicities)

    def test_single_tree_forest_equals_tree(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=1, seed=4))
        np.testing.assert_array_equal(forest.predict(two_blobs.features),
                                      forest.trees[0].predict(two_blobs.features))

    def test_separable_training_accuracy(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=30, seed=1))
        assert np.mean(forest.predict(two_blobs.features) == two_blobs.labels) == 1.0

    def test_single_class_rejected(self):
        ds = make_dataset(np.random.default_rng(0).normal(0, 1, (10, 2)),
                          np.ones(10, dtype=int))
        with pytest.raises(DataError, match="2 classes"):
            fit_forest(ds, ForestConfig(n_trees=2))

    def test_bootstrap_mass(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=20, seed=0))
        sums = forest.bootstrap.multiplicities.sum(axis=1)
        assert np.all(sums == two_blobs.n_samples)

    def test_routing_totality(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=10, seed=0))
        queries = np.random.default_rng(5).normal(0, 10, (200, 3))
        for tree in forest.trees:
            leaves = tree.apply(queries)
            assert np.all(tree.feature[leaves] == -1)

    def test_proba_simplex_and_counting(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=17, seed=2))
        proba = forest.predict_proba(two_blobs.features)
        assert np.all(proba >= 0)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        votes = np.zeros_like(proba)
        rows = np.arange(two_blobs.n_samples)
        for tree in forest.trees:
            votes[rows, tree.predict(two_blobs.features) - 1] += 1
        np.testing.assert_allclose(proba, votes / 17)

    def test_prediction_invariant_to_tree_order(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=9, seed=3))
        import dataclasses
        shuffled = dataclasses.replace(forest, trees=tuple(reversed(forest.trees)))
        np.testing.assert_array_equal(forest.predict(two_blobs.features),
                                      shuffled.predict(two_blobs.features))

    def test_dimension_mismatch(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=2, seed=0))
        with pytest.raises(DataError, match="features"):
            forest.predict(np.zeros((1, 5)))

    @given(st.integers(0, 2 ** 31))
    @settings(max_examples=10, deadline=None)
    def test_bootstrap_mass_property(self, seed):
        rng = np.random.default_rng(1)
        ds = make_dataset(rng.normal(0, 1, (12, 2)),
                          [1, 2] * 6)
        forest = fit_forest(ds, ForestConfig(n_trees=3, seed=seed))
        assert np.all(forest.bootstrap.multiplicities.sum(axis=1) == 12)


class TestOob:
    def test_all_inbag_sample_abstains(self):
        # one tree over two samples, both guaranteed in-bag is not certain;
        # force it by building the record directly
        ds = make_dataset([[0.0], [1.0], [2.0], [3.0]], [1, 1, 2, 2])
        forest = fit_forest(ds, ForestConfig(n_trees=1, seed=7))
        boot = forest.bootstrap.multiplicities
        inbag_everywhere = np.nonzero((boot > 0).all(axis=0))[0]
        preds = oob_predict(forest, ds)
        for i in inbag_everywhere:
            assert preds[i] == OOB_ABSTAIN
        filled = oob_predict_filled(forest, ds)
        assert np.all(filled != OOB_ABSTAIN)

    def test_oob_tree_counts_concentrate(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(0, 1, (360, 4)), rng.normal(5, 1, (360, 4))])
        y = np.array([1] * 360 + [2] * 360)
        ds = make_dataset(X, y)
        forest = fit_forest(ds, ForestConfig(n_trees=500, max_depth=4, seed=0))
        s = forest.bootstrap.oob_tree_counts()
        # |S_i| ~ Binomial(500, (1-1/N)^N ~ 0.368); far tails are impossible
        assert s.mean() == pytest.approx(0.368 * 500, rel=0.05)
        assert np.all(s > 100)

    def test_oob_accuracy_close_to_cv(self, three_blobs):
        forest = fit_forest(three_blobs, ForestConfig(n_trees=100, seed=0))
        preds = oob_predict_filled(forest, three_blobs)
        oob_acc = np.mean(preds == three_blobs.labels)

        rng = np.random.default_rng(0)
        fold_of = stratified_folds(three_blobs.labels, 5, rng)
        accs = []
        for f in range(5):
            tr = fold_of != f
            sub = make_dataset(three_blobs.features[tr], three_blobs.labels[tr])
            fo = fit_forest(sub, ForestConfig(n_trees=100, seed=f))
            accs.append(np.mean(fo.predict(three_blobs.features[~tr])
                                == three_blobs.labels[~tr]))
        assert abs(oob_acc - np.mean(accs)) <= 0.05


class TestGridSearch:
    def test_table_grid_cardinality(self):
        assert len(ForestGrid.full()) == 9 * 11 * 2 * 2 == 396

    def test_single_config_returned(self, two_blobs):
        grid = ForestGrid(n_trees=(5,), max_depth=(3,), max_features=("sqrt",),
                          criterion=("gini",))
        cfg = grid_search_cv(two_blobs, grid, folds=2, seed=0)
        assert (cfg.n_trees, cfg.max_depth) == (5, 3)

    def test_planted_winner(self):
        # XOR-style labels need depth 2; depth-1 stumps sit near chance
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, (200, 2))
        y = 1 + ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
        X[:, 0] += np.sign(X[:, 0]) * 0.2
        X[:, 1] += np.sign(X[:, 1]) * 0.2
        ds = make_dataset(X, y)
        grid = ForestGrid(n_trees=(20,), max_depth=(1, None),
                          max_features=("all",), criterion=("gini",))
        cfg = grid_search_cv(ds, grid, folds=3, seed=0)
        assert cfg.max_depth is None

    def test_class_too_small_to_stratify(self):
        ds = make_dataset([[0.0], [1.0], [2.0], [3.0]], [1, 1, 1, 2])
        grid = ForestGrid(n_trees=(2,), max_depth=(2,), max_features=("all",),
                          criterion=("gini",))
        with pytest.raises(DataError, match="stratify"):
            grid_search_cv(ds, grid, folds=3, seed=0)


class TestSerialization:
    def test_round_trip_exact(self, two_blobs):
        forest = fit_forest(two_blobs, ForestConfig(n_trees=7, seed=12))
        arrays = forest_to_arrays(forest)
        back = forest_from_arrays(arrays, forest.config, forest.n_classes,
                                  forest.n_features)
        queries = np.random.default_rng(0).normal(0, 3, (100, 3))
        np.testing.assert_array_equal(forest.predict(queries), back.predict(queries))
        for a, b in zip(forest.trees, back.trees):
            np.testing.assert_array_equal(a.threshold, b.threshold)
