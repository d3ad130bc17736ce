"""Open-set evaluation: confusion over the known classes plus one unknown
bucket, the seven summary metrics, decision-surface export, and multi-run
aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np

from .dataset import UNKNOWN_LABEL
from .errors import DataError

METRIC_FIELDS = ("accuracy", "acc_known_cls", "recall_osr", "precision_osr",
                 "geo_mean_pr", "mic_f1", "mac_f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """(C+1) x (C+1) counts; the last row/column is the unknown bucket."""

    counts: np.ndarray
    n_known: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if counts.shape != (self.n_known + 1, self.n_known + 1):
            raise DataError("confusion matrix shape must be (C+1, C+1)")

    @property
    def total(self):
        return int(self.counts.sum())


def _bucket(labels, n_known):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab == UNKNOWN_LABEL:
            out[i] = n_known
        elif 1 <= lab <= n_known:
            out[i] = lab - 1
        else:
            raise DataError(f"label {int(lab)} outside 1..{n_known} and unknown")
    return out


def confusion(true_labels, predicted_labels, n_known):
    true_labels = np.asarray(true_labels)
    predicted_labels = np.asarray(predicted_labels)
    if true_labels.shape != predicted_labels.shape:
        raise DataError("label vectors must have equal length")
    t = _bucket(true_labels, n_known)
    p = _bucket(predicted_labels, n_known)
    counts = np.zeros((n_known + 1, n_known + 1), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return ConfusionMatrix(counts, n_known)


@dataclass
class MetricsReport:
    accuracy: float
    acc_known_cls: float
    recall_osr: float
    precision_osr: float
    geo_mean_pr: float
    mic_f1: float
    mac_f1: float
    degenerate: bool = False

    def as_dict(self):
        return {f: getattr(self, f) for f in METRIC_FIELDS}


def _safe_div(num, den):
    return (num / den, False) if den > 0 else (0.0, True)


def compute_metrics(cm):
    """The seven open-set metrics from a (C+1)-class confusion matrix.

    Unknown-bucket precision/recall with zero denominators are reported as
    0 and flip the ``degenerate`` flag (the closed-set baseline never
    predicts unknown, for instance). F1 scores cover the known classes
    only, counting rejected known samples as false negatives and accepted
    unknown samples as false positives of the predicted class.
    """
    c = cm.counts
    k = cm.n_known
    total = cm.total
    degenerate = False

    accuracy, d = _safe_div(float(np.trace(c)), total)
    degenerate |= d
    known_total = int(c[:k].sum())
    acc_known, d = _safe_div(float(np.trace(c[:k, :k])), known_total)
    degenerate |= d
    recall_osr, d = _safe_div(float(c[k, k]), int(c[k].sum()))
    degenerate |= d
    precision_osr, d = _safe_div(float(c[k, k]), int(c[:, k].sum()))
    degenerate |= d
    geo = float(np.sqrt(precision_osr * recall_osr))

    tp = np.diag(c)[:k].astype(np.float64)
    fp = c[:, :k].sum(axis=0) - np.diag(c)[:k]
    fn = c[:k, :].sum(axis=1) - np.diag(c)[:k]

    mic_p, d1 = _safe_div(float(tp.sum()), float(tp.sum() + fp.sum()))
    mic_r, d2 = _safe_div(float(tp.sum()), float(tp.sum() + fn.sum()))
    degenerate |= d1 or d2
    mic_f1 = 2 * mic_p * mic_r / (mic_p + mic_r) if mic_p + mic_r > 0 else 0.0

    f1s = []
    for i in range(k):
        p, d1 = _safe_div(float(tp[i]), float(tp[i] + fp[i]))
        r, d2 = _safe_div(float(tp[i]), float(tp[i] + fn[i]))
        degenerate |= d1 or d2
        f1s.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    mac_f1 = float(np.mean(f1s)) if f1s else 0.0

    return MetricsReport(accuracy=accuracy, acc_known_cls=acc_known,
                         recall_osr=recall_osr, precision_osr=precision_osr,
                         geo_mean_pr=geo, mic_f1=float(mic_f1), mac_f1=mac_f1,
                         degenerate=degenerate)


def write_confusion_csv(cm, path, class_names=None):
    names = ([class_names.get(i + 1, str(i + 1)) for i in range(cm.n_known)]
             if class_names else [str(i + 1) for i in range(cm.n_known)])
    names.append("unknown")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\predicted"] + names)
        for i, row in enumerate(cm.counts):
            w.writerow([names[i]] + [int(v) for v in row])


@dataclass(frozen=True)
class DecisionGrid:
    x: np.ndarray
    y: np.ndarray
    label: np.ndarray


def decision_grid(classify_fn, bounds, resolution):
    """Classify every point of a resolution x resolution lattice over the
    2-D box ``bounds`` = (x_min, x_max, y_min, y_max)."""
    if resolution < 2:
        raise DataError("resolution must be >= 2")
    x_min, x_max, y_min, y_max = bounds
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    labels = np.asarray(classify_fn(pts), dtype=np.int64)
    if labels.shape != (pts.shape[0],):
        raise DataError("classify_fn must return one label per grid point")
    return DecisionGrid(x=pts[:, 0], y=pts[:, 1], label=labels)


def write_grid_csv(grid, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "decision"])
        for x, y, lab in zip(grid.x, grid.y, grid.label):
            w.writerow([repr(float(x)), repr(float(y)), int(lab)])


@dataclass
class AggregateReport:
    """Per-metric mean and sample standard deviation over repeated runs."""

    mean: dict
    std: dict
    runs: list

    @property
    def n_runs(self):
        return len(self.runs)


def aggregate_runs(reports):
    if not reports:
        raise DataError("need at least one report to aggregate")
    mean = {}
    std = {}
    for f in METRIC_FIELDS:
        vals = np.array([getattr(r, f) for r in reports], dtype=np.float64)
        mean[f] = float(vals.mean())
        std[f] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return AggregateReport(mean=mean, std=std, runs=list(reports))
