"""Data ingestion, standardization, open-set splits, and Gaussian mixtures."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

#: Sentinel class id for "none of the known classes". Never collides with
#: the 1-based ids assigned by loaders.
UNKNOWN_LABEL = 0

UNKNOWN_NAME = "unknown"


@dataclass(frozen=True)
class Dataset:
    """A feature matrix with integer class labels.

    Labels are keys of ``class_names``; loaders assign contiguous ids
    1..C in first-appearance order. Open-set test sets additionally use
    ``UNKNOWN_LABEL`` (0) for samples outside the known classes.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple
    class_names: dict

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise DataError("dataset must have at least one row and one column")
        if labs.shape != (n,):
            raise DataError("labels length does not match feature rows")
        if len(self.feature_names) != d:
            raise DataError("feature_names length does not match columns")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain missing or non-finite entries")
        known = set(self.class_names)
        for lab in np.unique(labs):
            if int(lab) not in known:
                raise DataError(f"label {int(lab)} missing from class_names")

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        """Number of known (non-sentinel) classes named in this dataset."""
        return len([k for k in self.class_names if k != UNKNOWN_LABEL])

    def class_counts(self):
        """Sample count per label id, as a dict."""
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass(frozen=True)
class StandardizationParams:
    """Per-column means and standard deviations from a training set."""

    means: np.ndarray
    std_devs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "std_devs", np.asarray(self.std_devs, dtype=np.float64))
        if self.means.shape != self.std_devs.shape or self.means.ndim != 1:
            raise DataError("means and std_devs must be 1-D and equal length")
        if np.any(self.std_devs <= 0):
            raise DataError("std_devs must be strictly positive")

    def apply(self, features):
        return (np.asarray(features, dtype=np.float64) - self.means) / self.std_devs

    def invert(self, features):
        return np.asarray(features, dtype=np.float64) * self.std_devs + self.means


def standardize(data, params=None):
    """Column-wise (x - mean) / std. Returns (new dataset, params used).

    When ``params`` is omitted they are computed from ``data`` (population
    std); constant columns get std 1.0 and a warning. Test data must be
    transformed with the training params.
    """
    if params is None:
        means = data.features.mean(axis=0)
        stds = data.features.std(axis=0)
        flat = stds == 0
        if np.any(flat):
            names = [data.feature_names[i] for i in np.nonzero(flat)[0][:5]]
            warnings.warn(f"constant feature columns (std forced to 1.0): {names}")
            stds = np.where(flat, 1.0, stds)
        params = StandardizationParams(means, stds)
    elif params.means.shape[0] != data.n_features:
        raise DataError(
            f"standardization params have {params.means.shape[0]} columns, "
            f"data has {data.n_features}")
    out = Dataset(params.apply(data.features), data.labels,
                  data.feature_names, dict(data.class_names))
    return out, params


def load_csv(path, label_column):
    """Load a UTF-8 CSV with a header row into a Dataset.

    All non-label columns must parse as reals. Labels are factorized to
    contiguous ids 1..C in first-appearance order; the mapping is kept in
    ``class_names``.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        feature_names = [h for i, h in enumerate(header) if i != label_idx]

        rows = []
        raw_labels = []
        for rownum, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise DataError(f"{path}: row {rownum} has {len(rec)} cells, expected {len(header)}")
            vals = []
            for i, cell in enumerate(rec):
                if i == label_idx:
                    raw_labels.append(cell.strip())
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {rownum}, column {header[i]!r}: "
                        f"could not parse {cell!r} as a real number")
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")

    id_of = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, name in enumerate(raw_labels):
        if name not in id_of:
            id_of[name] = len(id_of) + 1
        labels[i] = id_of[name]
    class_names = {cid: name for name, cid in id_of.items()}
    return Dataset(np.array(rows, dtype=np.float64), labels,
                   tuple(feature_names), class_names)


@dataclass(frozen=True)
class OpenSetSplit:
    """A train/test partition where test may contain unknown classes.

    Known-class ids are renumbered contiguously (1..K) within the split;
    unknown-class test samples carry ``unknown_label``. The original row
    indices and label names are retained for manifest export.
    """

    train: Dataset
    test: Dataset
    known_class_ids: frozenset
    unknown_label: int
    train_indices: np.ndarray
    test_indices: np.ndarray
    train_original_labels: tuple
    test_original_labels: tuple

    def __post_init__(self):
        if set(np.unique(self.train.labels)) - set(self.known_class_ids):
            raise DataError("train split contains non-known labels")
        if self.unknown_label in self.known_class_ids:
            raise DataError("unknown_label collides with a known class id")
        overlap = set(self.train_indices.tolist()) & set(self.test_indices.tolist())
        if overlap:
            raise DataError("train and test share sample indices")


def _stratified_counts(class_sizes, fraction):
    """Per-class train counts: floor(f*n_c), then hand the remainder of
    floor(f*N) to the largest fractional parts (ties to lower class id)."""
    classes = sorted(class_sizes)
    exact = {c: fraction * class_sizes[c] for c in classes}
    base = {c: int(np.floor(exact[c] + 1e-9)) for c in classes}
    total_target = int(np.floor(fraction * sum(class_sizes.values()) + 1e-9))
    deficit = total_target - sum(base.values())
    by_frac = sorted(classes, key=lambda c: (-(exact[c] - base[c]), c))
    for c in by_frac[:max(deficit, 0)]:
        base[c] += 1
    return base


def make_open_set_split(data, known_classes, train_fraction, seed):
    """Stratified open-set split.

    A per-known-class random ``train_fraction`` goes to train; the rest of
    the known samples plus every unknown-class sample form the test set
    with unknown labels remapped to the sentinel. Deterministic given seed.
    """
    known = set(int(c) for c in known_classes)
    all_classes = set(int(k) for k in data.class_names if k != UNKNOWN_LABEL)
    if not known:
        raise DataError("known_classes is empty")
    if not known <= all_classes:
        raise DataError(f"unknown class ids in known_classes: {sorted(known - all_classes)}")
    if known == all_classes:
        raise DataError("known_classes covers every class; no open set remains")
    if not 0 < train_fraction < 1:
        raise DataError("train_fraction must lie in (0, 1)")
    counts = data.class_counts()
    for c in sorted(known):
        if counts.get(c, 0) < 2:
            raise DataError(f"known class {c} has fewer than 2 samples")

    rng = np.random.default_rng(seed)
    class_sizes = {c: counts[c] for c in sorted(known)}
    take = _stratified_counts(class_sizes, train_fraction)

    train_idx = []
    for c in sorted(known):
        members = np.nonzero(data.labels == c)[0]
        order = rng.permutation(len(members))
        train_idx.extend(members[order[:take[c]]].tolist())
    train_idx = np.array(sorted(train_idx), dtype=np.int64)
    in_train = np.zeros(data.n_samples, dtype=bool)
    in_train[train_idx] = True
    test_idx = np.nonzero(~in_train)[0]

    # renumber known ids contiguously, keep name mapping
    new_id = {c: i + 1 for i, c in enumerate(sorted(known))}
    train_names = {new_id[c]: data.class_names[c] for c in sorted(known)}
    test_names = dict(train_names)
    test_names[UNKNOWN_LABEL] = UNKNOWN_NAME

    train_labels = np.array([new_id[int(l)] for l in data.labels[train_idx]], dtype=np.int64)
    test_labels = np.array(
        [new_id.get(int(l), UNKNOWN_LABEL) for l in data.labels[test_idx]], dtype=np.int64)

    train = Dataset(data.features[train_idx], train_labels, data.feature_names, train_names)
    test = Dataset(data.features[test_idx], test_labels, data.feature_names, test_names)
    return OpenSetSplit(
        train=train, test=test,
        known_class_ids=frozenset(new_id.values()),
        unknown_label=UNKNOWN_LABEL,
        train_indices=train_idx, test_indices=test_idx,
        train_original_labels=tuple(data.class_names[int(l)] for l in data.labels[train_idx]),
        test_original_labels=tuple(data.class_names[int(l)] for l in data.labels[test_idx]),
    )


def write_split_manifest(split, path):
    """CSV manifest: sample index, role, original label, effective label."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "role", "original_label", "effective_label"])
        for idx, orig, eff in zip(split.train_indices, split.train_original_labels,
                                  split.train.labels):
            w.writerow([int(idx), "train", orig, int(eff)])
        for idx, orig, eff in zip(split.test_indices, split.test_original_labels,
                                  split.test.labels):
            w.writerow([int(idx), "test", orig, int(eff)])


def write_dataset_csv(data, path, label_column="label"):
    """Write a Dataset back to CSV with label names in ``label_column``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(data.feature_names) + [label_column])
        for row, lab in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in row] + [data.class_names[int(lab)]])


@dataclass(frozen=True)
class MixtureComponent:
    mean: np.ndarray
    covariance: np.ndarray
    count: int
    class_id: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=np.float64))
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise DataError("covariance shape does not match mean dimension")
        if self.count < 0:
            raise DataError("component count must be non-negative")


@dataclass(frozen=True)
class MixtureSpec:
    """Gaussian mixture blueprint for synthetic open-set scenarios."""

    components: tuple
    known_fraction: float
    known_classes: frozenset
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "known_classes", frozenset(int(c) for c in self.known_classes))
        if not 0 < self.known_fraction <= 1:
            raise DataError("known_fraction must lie in (0, 1]")
        class_ids = {c.class_id for c in self.components}
        if not self.known_classes:
            raise DataError("known_classes is empty")
        if not self.known_classes < class_ids:
            raise DataError("known_classes must be a strict subset of component classes")


def synth_mixture(spec):
    """Sample the mixture and build an OpenSetSplit, deterministic in seed.

    Each component is drawn as mean + z @ chol(cov).T from standard
    normals. A non-PSD covariance surfaces as a DataError.
    """
    root = np.random.SeedSequence(spec.seed)
    sample_ss, split_ss = root.spawn(2)
    rng = np.random.default_rng(sample_ss)

    blocks = []
    labels = []
    for comp in spec.components:
        try:
            chol = np.linalg.cholesky(comp.covariance)
        except np.linalg.LinAlgError:
            raise DataError(
                f"component class {comp.class_id}: covariance is not positive definite")
        z = rng.standard_normal((comp.count, comp.mean.shape[0]))
        blocks.append(comp.mean + z @ chol.T)
        labels.extend([comp.class_id] * comp.count)
    features = np.vstack([b for b in blocks if len(b)]) if labels else np.empty((0, 2))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise DataError("mixture produced no samples")
    dim = features.shape[1]
    names = tuple(f"x{i + 1}" for i in range(dim))
    class_names = {c.class_id: str(c.class_id) for c in spec.components}
    data = Dataset(features, labels, names, class_names)

    split_seed = int(split_ss.generate_state(1)[0])
    if spec.known_fraction == 1.0:
        # degenerate request: keep a single holdout per known class so the
        # split machinery (which requires a fraction < 1) still applies
        raise DataError("known_fraction must be < 1 to leave known test samples")
    return make_open_set_split(data, spec.known_classes, spec.known_fraction, split_seed)


def default_mixture_spec(seed=0):
    """The mixture shipped for the simulated open-set experiment.

    Three known classes line up along x, tight in x but with heterogeneous
    y spreads (y carries almost no class signal). Three unknown classes
    fill the x-gaps at moderate y offsets, where raw Euclidean ratios get
    deflated by the wide-y known class; one more sits past the right end
    as a directional outlier. Counts put roughly 35% known mass in the
    test set.
    """
    def cov(sx2, sy2):
        return np.array([[sx2, 0.0], [0.0, sy2]])

    comps = (
        MixtureComponent(mean=(0.0, 0.0), covariance=cov(0.25, 9.0), count=250, class_id=1),
        MixtureComponent(mean=(5.0, 0.0), covariance=cov(0.25, 1.0), count=250, class_id=2),
        MixtureComponent(mean=(10.0, 0.0), covariance=cov(0.25, 4.0), count=250, class_id=3),
        MixtureComponent(mean=(2.5, 3.0), covariance=cov(0.25, 4.0), count=70, class_id=4),
        MixtureComponent(mean=(7.5, -3.0), covariance=cov(0.25, 4.0), count=70, class_id=5),
        MixtureComponent(mean=(2.5, -3.0), covariance=cov(0.25, 4.0), count=70, class_id=6),
        MixtureComponent(mean=(14.0, 0.0), covariance=cov(0.25, 4.0), count=70, class_id=7),
    )
    return MixtureSpec(components=comps, known_fraction=0.8,
                       known_classes=frozenset({1, 2, 3}), seed=seed)
