"""From-scratch CART random forest with the bootstrap bookkeeping needed to
recover geometry-preserving proximities, plus out-of-bag prediction and
grid-search cross-validation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import DataError

_CRITERIA = {"gini": kernels.GINI, "entropy": kernels.ENTROPY}
_FEATURE_RULES = ("sqrt", "log2", "all")

#: out-of-bag vote marker for "no tree left this sample out"
OOB_ABSTAIN = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 300
    max_depth: int | None = None
    max_features: str = "sqrt"
    criterion: str = "gini"
    min_samples_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise DataError("min_samples_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise DataError("max_depth must be >= 1 or None")
        if self.max_features not in _FEATURE_RULES:
            raise DataError(f"max_features must be one of {_FEATURE_RULES}")
        if self.criterion not in _CRITERIA:
            raise DataError(f"criterion must be one of {tuple(_CRITERIA)}")

    def resolve_max_features(self, n_dims):
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_dims)))
        if self.max_features == "log2":
            return max(1, int(np.log2(n_dims)))
        return n_dims


@dataclass(frozen=True)
class Tree:
    """Flat-array CART tree; feature[i] == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    class_counts: np.ndarray  # (n_nodes, C) multiplicity-weighted counts

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def node_prediction(self):
        """Per-node argmax class id (1-based, ties to lowest id)."""
        return np.argmax(self.class_counts, axis=1) + 1

    def apply(self, X):
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        return kernels.apply_tree(self.feature, self.threshold, self.left,
                                  self.right, X)

    def predict(self, X):
        return self.node_prediction[self.apply(X)]


@dataclass(frozen=True)
class BootstrapRecord:
    """Per-tree multiplicity of each training sample in the bootstrap draw."""

    multiplicities: np.ndarray  # (n_trees, N) int

    def __post_init__(self):
        object.__setattr__(self, "multiplicities",
                           np.asarray(self.multiplicities, dtype=np.int64))

    @property
    def n_trees(self):
        return self.multiplicities.shape[0]

    @property
    def n_samples(self):
        return self.multiplicities.shape[1]

    def in_bag(self, t):
        return self.multiplicities[t] > 0

    def oob(self, t):
        return self.multiplicities[t] == 0

    def oob_tree_counts(self):
        """|S_i|: number of trees in which sample i is out of bag."""
        return (self.multiplicities == 0).sum(axis=0)


@dataclass(frozen=True)
class Forest:
    trees: tuple
    bootstrap: BootstrapRecord
    config: ForestConfig
    n_classes: int
    n_features: int

    @property
    def n_trees(self):
        return len(self.trees)

    def terminal_of(self, t, x):
        """Leaf id reached by feature vector x in tree t."""
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return int(self.trees[t].apply(x)[0])

    def predict_proba(self, X):
        """Fraction of trees voting each class; rows sum to 1."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} features, got {X.shape[1]}")
        votes = np.zeros((X.shape[0], self.n_classes), dtype=np.float64)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.predict(X) - 1] += 1.0
        return votes / self.n_trees

    def predict(self, X):
        """Majority class id per row (ties to lowest class id)."""
        return np.argmax(self.predict_proba(X), axis=1) + 1


def fit_tree(features, labels, multiplicities, config, seed, n_classes=None):
    """Grow one tree from the multiplicity-weighted bootstrap sample."""
    X = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    mult = np.asarray(multiplicities, dtype=np.int64)
    if np.all(mult == 0):
        raise DataError("all multiplicities are zero; nothing in-bag")
    if n_classes is None:
        n_classes = int(y.max())
    depth = kernels.NO_DEPTH_LIMIT if config.max_depth is None else config.max_depth
    feat, thr, left, right, counts, n_nodes = kernels.grow_tree(
        X, y - 1, mult, n_classes, config.resolve_max_features(X.shape[1]),
        _CRITERIA[config.criterion], depth, config.min_samples_leaf, int(seed))
    return Tree(feat, thr, left, right, counts)


def fit_forest(train, config):
    """Train ``config.n_trees`` bootstrapped trees, keeping the bootstrap
    multiplicities. Each tree's randomness derives from (seed, tree index),
    so the forest is byte-identical across runs and tree order."""
    if train.n_classes < 2:
        raise DataError("training data must contain at least 2 classes")
    X = np.ascontiguousarray(train.features)
    y = train.labels
    n = train.n_samples
    c = train.n_classes
    boot = np.empty((config.n_trees, n), dtype=np.int64)
    trees = []
    base_seed = config.seed % (2 ** 63)
    for t in range(config.n_trees):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(base_seed, t)))
        draws = rng.integers(0, n, n)
        mult = np.bincount(draws, minlength=n).astype(np.int64)
        tree_seed = int(rng.integers(1, 2 ** 31 - 1))
        trees.append(fit_tree(X, y, mult, config, tree_seed, c))
        boot[t] = mult
    return Forest(trees=tuple(trees), bootstrap=BootstrapRecord(boot),
                  config=config, n_classes=c, n_features=train.n_features)


def oob_predict(forest, train):
    """Per-sample majority vote over the trees that left the sample out.

    Returns OOB_ABSTAIN (-1) where no tree did.
    """
    boot = forest.bootstrap.multiplicities
    if boot.shape[1] != train.n_samples:
        raise DataError("forest was not trained on this dataset (size mismatch)")
    votes = np.zeros((train.n_samples, forest.n_classes), dtype=np.int64)
    for t, tree in enumerate(forest.trees):
        mask = boot[t] == 0
        if not mask.any():
            continue
        preds = tree.predict(train.features[mask])
        np.add.at(votes, (np.nonzero(mask)[0], preds - 1), 1)
    out = np.argmax(votes, axis=1) + 1
    out[votes.sum(axis=1) == 0] = OOB_ABSTAIN
    return out


def oob_predict_filled(forest, train):
    """oob_predict with abstentions replaced by the global majority class."""
    preds = oob_predict(forest, train)
    if np.any(preds == OOB_ABSTAIN):
        counts = np.bincount(train.labels, minlength=forest.n_classes + 1)
        preds = preds.copy()
        preds[preds == OOB_ABSTAIN] = int(np.argmax(counts[1:])) + 1
    return preds


@dataclass(frozen=True)
class ForestGrid:
    """Hyperparameter ranges for grid-search cross-validation."""

    n_trees: tuple = (100, 150, 200, 250, 300, 350, 400, 450, 500)
    max_depth: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, None)
    max_features: tuple = ("sqrt", "log2")
    criterion: tuple = ("gini", "entropy")
    min_samples_leaf: int = 1

    @classmethod
    def full(cls):
        """Trees 100-500 step 50; depth 5-50 step 5 plus unlimited;
        sqrt/log2; gini/entropy."""
        return cls()

    @classmethod
    def fast(cls):
        """Reduced grid for iteration speed."""
        return cls(n_trees=(100, 300, 500), max_depth=(10, 30, None))

    def __len__(self):
        return (len(self.n_trees) * len(self.max_depth)
                * len(self.max_features) * len(self.criterion))

    def configs(self, seed=0):
        """Candidate configs sorted so ties resolve to fewer trees, then
        shallower depth (unlimited last), then feature rule, then criterion."""
        depth_key = lambda d: np.inf if d is None else d
        combos = sorted(
            itertools.product(self.n_trees, self.max_depth,
                              self.max_features, self.criterion),
            key=lambda c: (c[0], depth_key(c[1]), c[2], c[3]))
        for n_trees, depth, rule, crit in combos:
            yield ForestConfig(n_trees=n_trees, max_depth=depth, max_features=rule,
                               criterion=crit, min_samples_leaf=self.min_samples_leaf,
                               seed=seed)


def stratified_folds(labels, n_folds, rng):
    """Fold id per sample; each class spread round-robin over folds."""
    labels = np.asarray(labels)
    fold_of = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        members = np.nonzero(labels == c)[0]
        if len(members) < n_folds:
            raise DataError(f"class {int(c)} has {len(members)} samples; "
                            f"cannot stratify into {n_folds} folds")
        order = rng.permutation(len(members))
        fold_of[members[order]] = np.arange(len(members)) % n_folds
    return fold_of


def grid_search_cv(train, grid, folds=5, seed=0):
    """Pick the config with the best mean stratified-CV accuracy.

    Ties break toward fewer trees, then shallower depth (the candidate
    enumeration order guarantees this under strict improvement).
    """
    if folds < 2:
        raise DataError("folds must be >= 2")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed % (2 ** 63), 0xCF)))
    fold_of = stratified_folds(train.labels, folds, rng)

    from .dataset import Dataset  # local import to avoid cycle at module load
    best_acc = -np.inf
    best_cfg = None
    for cfg in grid.configs(seed=seed):
        accs = []
        for f in range(folds):
            tr = fold_of != f
            va = ~tr
            sub = Dataset(train.features[tr], train.labels[tr],
                          train.feature_names, dict(train.class_names))
            forest = fit_forest(sub, cfg)
            preds = forest.predict(train.features[va])
            accs.append(float(np.mean(preds == train.labels[va])))
        mean_acc = float(np.mean(accs))
        if mean_acc > best_acc:
            best_acc = mean_acc
            best_cfg = cfg
    return best_cfg


# --- flat-array (de)serialization for the model bundle ---------------------

def forest_to_arrays(forest):
    """Pack a forest into named arrays with exact round-trip."""
    offs = np.zeros(forest.n_trees + 1, dtype=np.int64)
    for t, tree in enumerate(forest.trees):
        offs[t + 1] = offs[t] + tree.n_nodes
    return {
        "tree_offsets": offs,
        "node_feature": np.concatenate([t.feature for t in forest.trees]),
        "node_threshold": np.concatenate([t.threshold for t in forest.trees]),
        "node_left": np.concatenate([t.left for t in forest.trees]),
        "node_right": np.concatenate([t.right for t in forest.trees]),
        "node_counts": np.concatenate([t.class_counts for t in forest.trees]),
        "bootstrap": forest.bootstrap.multiplicities,
    }


def forest_from_arrays(arrays, config, n_classes, n_features):
    offs = arrays["tree_offsets"]
    trees = []
    for t in range(len(offs) - 1):
        a, b = int(offs[t]), int(offs[t + 1])
        trees.append(Tree(
            feature=np.ascontiguousarray(arrays["node_feature"][a:b]),
            threshold=np.ascontiguousarray(arrays["node_threshold"][a:b]),
            left=np.ascontiguousarray(arrays["node_left"][a:b]),
            right=np.ascontiguousarray(arrays["node_right"][a:b]),
            class_counts=np.ascontiguousarray(arrays["node_counts"][a:b]),
        ))
    return Forest(trees=tuple(trees), bootstrap=BootstrapRecord(arrays["bootstrap"]),
                  config=config, n_classes=n_classes, n_features=n_features)
