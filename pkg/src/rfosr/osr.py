"""Distance-ratio open-set classification in the transformed feature space.

A query's mean distance to its K nearest neighbors, divided by its mean
distance to the K nearest points of any other class, measures how deep it
sits inside its own class. The upper tail of that ratio over the training
set is modeled with a generalized Pareto distribution (peaks over a
threshold), giving a calibrated exceedance probability; queries whose
probability falls below alpha are declared unknown, everything else gets
the closed-set forest's label. A single-nearest-neighbor thresholded
variant serves as the baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from . import kernels
from .dataset import UNKNOWN_LABEL
from .errors import DataError, NumericalError
from .forest import stratified_folds
from .metric import identity_metric

# clamp box for the reparameterized tail likelihood; the lower b edge keeps
# the optimizer away from the unbounded likelihood spike at tau -> max(x)
_A_BOUNDS = (-4.0, 3.0)
_B_BOUNDS = (-8.0, 4.0)


@dataclass(frozen=True)
class NeighborIndex:
    """Exact nearest-neighbor store: points with 1-based class labels.

    Neighbor queries return the true K smallest Euclidean distances with
    ties broken by lowest training index.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        labs = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labs)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise DataError("index requires a non-empty 2-D point matrix")
        if labs.shape != (pts.shape[0],):
            raise DataError("labels length does not match points")
        if labs.min() < 1:
            raise DataError("index labels must be 1-based class ids")

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def n_classes(self):
        return int(self.labels.max())

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes + 1)[1:]


def _neighbor_tables(index, queries, exclude_self=False):
    """Per-query neighbor labels (0-based) and distances sorted ascending.

    With ``exclude_self`` the queries are the index points themselves and
    each row drops its own entry (leave-one-out).
    """
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim == 1:
        queries = queries.reshape(1, -1)
    if queries.shape[1] != index.points.shape[1]:
        raise DataError(f"query dimension {queries.shape[1]} != index "
                        f"dimension {index.points.shape[1]}")
    d = cdist(queries, index.points)
    if exclude_self:
        np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    nb_d = np.take_along_axis(d, order, axis=1)
    nb_l = (index.labels - 1)[order]
    if exclude_self:
        nb_d = nb_d[:, :-1]
        nb_l = nb_l[:, :-1]
    return np.ascontiguousarray(nb_l), np.ascontiguousarray(nb_d)


def _ratios_from_tables(nb_l, nb_d, k_neighbors, n_classes):
    y0, d_bar, d_counter = kernels.ratio_scan(nb_l, nb_d, k_neighbors, n_classes)
    if np.any(d_counter < 0):
        raise DataError(f"fewer than {k_neighbors} counter-class points available")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d_counter == 0.0, np.inf, d_bar / d_counter)
    return y0 + 1, d_bar, d_counter, r


def batch_ratios(index, queries, k_neighbors):
    """(majority label, mean distance, counter mean distance, ratio) per query."""
    if k_neighbors < 1:
        raise DataError("k_neighbors must be >= 1")
    if k_neighbors > index.n_points:
        raise DataError("k_neighbors exceeds index size")
    nb_l, nb_d = _neighbor_tables(index, queries)
    return _ratios_from_tables(nb_l, nb_d, k_neighbors, index.n_classes)


def knn_label_and_distance(index, x, k_neighbors):
    """Majority label among the K nearest (ties to lowest class id) and the
    mean distance to them."""
    if k_neighbors < 1:
        raise DataError("k_neighbors must be >= 1")
    if k_neighbors > index.n_points:
        raise DataError("k_neighbors exceeds index size")
    nb_l, nb_d = _neighbor_tables(index, np.asarray(x).reshape(1, -1))
    votes = np.bincount(nb_l[0, :k_neighbors], minlength=index.n_classes)
    return int(np.argmax(votes)) + 1, float(nb_d[0, :k_neighbors].mean())


def counter_distance(index, x, y_star, k_neighbors):
    """Mean distance to the K nearest points whose label differs from y_star."""
    mask = index.labels != y_star
    if mask.sum() < k_neighbors:
        raise DataError(f"fewer than {k_neighbors} points outside class {y_star}")
    d = cdist(np.asarray(x, dtype=np.float64).reshape(1, -1), index.points[mask])[0]
    order = np.argsort(d, kind="stable")
    return float(d[order[:k_neighbors]].mean())


def distance_ratio(index, x, k_neighbors):
    """(majority label, ratio of same-vote to counter-class mean distance).

    A zero counter distance returns +inf: the query sits on counter-class
    evidence and is maximally unknown-leaning.
    """
    y, _, _, r = batch_ratios(index, np.asarray(x).reshape(1, -1), k_neighbors)
    return int(y[0]), float(r[0])


def training_ratios(index, k_neighbors):
    """Leave-one-out distance ratio for every index point."""
    counts = index.class_counts()
    if np.any(counts[counts > 0] <= k_neighbors):
        small = int(np.nonzero((counts > 0) & (counts <= k_neighbors))[0][0]) + 1
        raise DataError(f"class {small} has <= {k_neighbors} members; "
                        "cannot compute leave-one-out ratios")
    nb_l, nb_d = _neighbor_tables(index, index.points, exclude_self=True)
    _, _, _, r = _ratios_from_tables(nb_l, nb_d, k_neighbors, index.n_classes)
    return r


# --- generalized Pareto tail ------------------------------------------------

def gpd_survival(x, tau, gamma):
    """(1 - x/tau)^(-1/gamma) on [0, tau); 1 below 0, 0 at tau and beyond."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    out[x <= 0] = 1.0
    inside = (x > 0) & (x < tau)
    out[inside] = (1.0 - x[inside] / tau) ** (-1.0 / gamma)
    return out if out.ndim else float(out)


def gpd_quantile(u, tau, gamma):
    """Inverse of the survival form: x = tau * (1 - u^(-gamma)), u in (0,1)."""
    u = np.asarray(u, dtype=np.float64)
    return tau * (1.0 - u ** (-gamma))


def _gpd_loglik(params, x, x_max):
    a, b = params
    a_c = min(max(a, _A_BOUNDS[0]), _A_BOUNDS[1])
    b_c = min(max(b, _B_BOUNDS[0]), _B_BOUNDS[1])
    tau = x_max * (1.0 + np.exp(b_c))
    # gamma = -exp(a); log density sums to n*log(-1/(gamma*tau))
    # + (-1/gamma - 1) * sum log(1 - x/tau)
    s = float(np.sum(np.log1p(-x / tau)))
    ll = x.shape[0] * (-a_c - np.log(tau)) + (np.exp(-a_c) - 1.0) * s
    penalty = 1e3 * ((a - a_c) ** 2 + (b - b_c) ** 2)
    return ll - penalty


def fit_gpd(excesses):
    """Maximum-likelihood tail fit constrained to gamma < 0, tau > max(x).

    The constraint is enforced by gamma = -exp(a), tau = max(x)*(1+exp(b));
    a coarse (a, b) grid seeds a Nelder-Mead refinement and the better of
    the two is returned as (tau, gamma, loglik).
    """
    x = np.asarray(excesses, dtype=np.float64)
    if x.size < 5:
        raise DataError("tail fit needs at least 5 excesses")
    if np.any(x <= 0) or not np.all(np.isfinite(x)):
        raise DataError("excesses must be finite and strictly positive")
    x_max = float(x.max())

    best_ll = -np.inf
    best = (0.0, 0.0)
    for a in np.linspace(-3.5, 2.5, 13):
        for b in np.linspace(-7.0, 3.5, 15):
            ll = _gpd_loglik((a, b), x, x_max)
            if ll > best_ll:
                best_ll = ll
                best = (a, b)

    res = minimize(lambda p: -_gpd_loglik(p, x, x_max), np.array(best),
                   method="Nelder-Mead",
                   options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 600})
    if np.isfinite(res.fun) and -res.fun > best_ll:
        best_ll = -float(res.fun)
        best = (float(res.x[0]), float(res.x[1]))
    a, b = best
    a = min(max(a, _A_BOUNDS[0]), _A_BOUNDS[1])
    b = min(max(b, _B_BOUNDS[0]), _B_BOUNDS[1])
    tau = x_max * (1.0 + np.exp(b))
    gamma = -float(np.exp(a))
    if not np.isfinite(best_ll):
        raise NumericalError("tail likelihood did not evaluate to a finite value")
    return float(tau), gamma, float(best_ll)


@dataclass(frozen=True)
class TailModel:
    """Peaks-over-threshold model of the training distance-ratio tail.

    ``empirical`` marks the fallback used when fewer than 5 excesses were
    available; the stored excesses then back an empirical survival curve.
    """

    t_r: float
    tau: float
    gamma: float
    p_exceed: float
    n_excesses: int
    empirical: bool = False
    excesses: np.ndarray | None = None


def fit_tail(ratios, quantile):
    """Threshold the ratios at their ``quantile``, fit the excess tail."""
    ratios = np.asarray(ratios, dtype=np.float64)
    finite = ratios[np.isfinite(ratios)]
    if finite.size == 0:
        return TailModel(t_r=0.0, tau=np.nan, gamma=np.nan, p_exceed=1.0,
                         n_excesses=0, empirical=True, excesses=np.empty(0))
    t_r = float(np.quantile(finite, quantile))
    p_exceed = float(np.mean(ratios > t_r))
    exc = finite[finite > t_r] - t_r
    if exc.size >= 5:
        tau, gamma, _ = fit_gpd(exc)
        return TailModel(t_r=t_r, tau=tau, gamma=gamma, p_exceed=p_exceed,
                         n_excesses=int(exc.size))
    return TailModel(t_r=t_r, tau=np.nan, gamma=np.nan, p_exceed=p_exceed,
                     n_excesses=int(exc.size), empirical=True,
                     excesses=np.sort(exc))


def exceedance_prob(tail, ratio):
    """P(training ratio exceeds ``ratio``), capped at p_exceed below the
    threshold; 0 beyond the fitted support or for an infinite ratio."""
    return float(exceedance_prob_batch(tail, np.array([ratio]))[0])


def exceedance_prob_batch(tail, ratios):
    r = np.asarray(ratios, dtype=np.float64)
    out = np.empty_like(r)
    below = r <= tail.t_r
    out[below] = tail.p_exceed
    rest = ~below
    if tail.empirical:
        if tail.n_excesses == 0:
            out[rest] = 0.0
        else:
            exc = r[rest] - tail.t_r
            surv = np.searchsorted(tail.excesses, exc, side="right")
            out[rest] = tail.p_exceed * (tail.n_excesses - surv) / tail.n_excesses
    else:
        exc = r[rest] - tail.t_r
        out[rest] = tail.p_exceed * gpd_survival(exc, tail.tau, tail.gamma)
    out[~np.isfinite(r)] = 0.0
    return out


# --- the fitted open-set classifier ----------------------------------------

@dataclass(frozen=True)
class OpenSetClassifier:
    forest: object
    metric: object  # MetricModel; identity for baselines
    index: NeighborIndex
    tail: TailModel
    k_neighbors: int
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if self.k_neighbors > self.index.n_points - 1:
            raise DataError("k_neighbors must be at most n_points - 1")


def classify_batch(clf, X):
    """Labels for a batch: the forest's prediction where the exceedance
    probability reaches alpha, the unknown sentinel elsewhere."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    transformed = clf.metric.transform(X)
    _, _, _, r = batch_ratios(clf.index, transformed, clf.k_neighbors)
    p = exceedance_prob_batch(clf.tail, r)
    accept = p >= clf.alpha
    out = np.full(X.shape[0], UNKNOWN_LABEL, dtype=np.int64)
    if accept.any():
        out[accept] = clf.forest.predict(X[accept])
    return out


def classify(clf, x):
    return int(classify_batch(clf, np.asarray(x).reshape(1, -1))[0])


def query_diagnostics(clf, X):
    """Per-query audit record: vote, distances, ratio, probability, decision."""
    X = np.asarray(X, dtype=np.float64)
    transformed = clf.metric.transform(X)
    y_star, d_bar, d_counter, r = batch_ratios(clf.index, transformed, clf.k_neighbors)
    p = exceedance_prob_batch(clf.tail, r)
    decision = classify_batch(clf, X)
    return {"y_star": y_star, "d_bar": d_bar, "d_counter": d_counter,
            "ratio": r, "p_exceed": p, "decision": decision}


def write_diagnostics_csv(clf, X, path):
    diag = query_diagnostics(clf, X)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y_star", "d_bar", "d_counter", "ratio", "p_exceed", "decision"])
        for i in range(len(diag["decision"])):
            w.writerow([int(diag["y_star"][i]), repr(float(diag["d_bar"][i])),
                        repr(float(diag["d_counter"][i])), repr(float(diag["ratio"][i])),
                        repr(float(diag["p_exceed"][i])), int(diag["decision"][i])])


@dataclass(frozen=True)
class KosnnGrids:
    k_values: tuple = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10)
    quantiles: tuple = (0.70, 0.80, 0.90)
    alphas: tuple = (0.01, 0.02, 0.05, 0.10)


def _geo_mean_pr(reject, is_unknown):
    tp = int(np.sum(reject & is_unknown))
    fp = int(np.sum(reject & ~is_unknown))
    n_unknown = int(np.sum(is_unknown))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / n_unknown if n_unknown > 0 else 0.0
    return float(np.sqrt(precision * recall))


def _rotation_plan(labels, cv_folds, seed):
    """Stratified folds paired with a rotating pseudo-unknown class."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed % (2 ** 63), 0x05)))
    fold_of = stratified_folds(labels, cv_folds, rng)
    classes = sorted(int(c) for c in np.unique(labels))
    plan = []
    for f in range(cv_folds):
        pseudo = classes[f % len(classes)]
        fit_mask = (fold_of != f) & (labels != pseudo)
        val_mask = fold_of == f
        plan.append((fit_mask, val_mask, pseudo))
    return plan


def _feasible_k(k_values, labels, masks):
    """Drop K values that some fit subset cannot support (leave-one-out
    needs every class strictly larger than K)."""
    limit = np.inf
    for mask in masks:
        counts = np.bincount(labels[mask])
        counts = counts[counts > 0]
        limit = min(limit, counts.min() - 1)
    keep = tuple(k for k in k_values if k <= limit)
    if not keep:
        raise DataError("no feasible neighborhood size for the given folds")
    return keep


def fit_kosnn(forest, metric_model, train, cv_folds=5, grids=None, seed=0):
    """Calibrate the K-neighbor open-set classifier on the training set.

    With 3 or more known classes the hyperparameters (K, threshold
    quantile, alpha) maximize the pseudo-open geometric-mean PR obtained
    by rotating each known class as the unknown across stratified folds.
    With exactly 2 classes K maximizes closed-set vote accuracy and the
    quantile/alpha take their grid midpoints. The final threshold, tail
    and exceedance rate are then fitted on the full training set.
    """
    grids = grids or KosnnGrids()
    if metric_model is None:
        metric_model = identity_metric(train.n_features)
    labels = train.labels
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise DataError("open-set calibration needs at least 2 known classes")
    transformed = metric_model.transform(train.features)

    if len(classes) >= 3:
        plan = _rotation_plan(labels, cv_folds, seed)
        k_values = _feasible_k(grids.k_values, labels, [m for m, _, _ in plan])
        scores = {(k, q, a): 0.0 for k in k_values
                  for q in grids.quantiles for a in grids.alphas}
        for fit_mask, val_mask, pseudo in plan:
            idx = NeighborIndex(transformed[fit_mask], labels[fit_mask])
            is_unknown = labels[val_mask] == pseudo
            fit_l, fit_d = _neighbor_tables(idx, idx.points, exclude_self=True)
            val_l, val_d = _neighbor_tables(idx, transformed[val_mask])
            for k in k_values:
                _, _, _, r_fit = _ratios_from_tables(fit_l, fit_d, k, idx.n_classes)
                _, _, _, r_val = _ratios_from_tables(val_l, val_d, k, idx.n_classes)
                for q in grids.quantiles:
                    tail = fit_tail(r_fit, q)
                    p_val = exceedance_prob_batch(tail, r_val)
                    for a in grids.alphas:
                        scores[(k, q, a)] += _geo_mean_pr(p_val < a, is_unknown) / cv_folds
        best_key = None
        best_score = -np.inf
        for k in k_values:
            for q in grids.quantiles:
                for a in grids.alphas:
                    if scores[(k, q, a)] > best_score:
                        best_score = scores[(k, q, a)]
                        best_key = (k, q, a)
        k_best, q_best, a_best = best_key
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed % (2 ** 63), 0x05)))
        fold_of = stratified_folds(labels, cv_folds, rng)
        masks = [fold_of != f for f in range(cv_folds)]
        k_values = _feasible_k(grids.k_values, labels, masks)
        best_acc = -np.inf
        k_best = k_values[0]
        for k in k_values:
            accs = []
            for f in range(cv_folds):
                fit_mask = fold_of != f
                val_mask = ~fit_mask
                idx = NeighborIndex(transformed[fit_mask], labels[fit_mask])
                y_val, _, _, _ = batch_ratios(idx, transformed[val_mask], k)
                accs.append(float(np.mean(y_val == labels[val_mask])))
            acc = float(np.mean(accs))
            if acc > best_acc:
                best_acc = acc
                k_best = k
        q_best = grids.quantiles[len(grids.quantiles) // 2]
        a_best = grids.alphas[len(grids.alphas) // 2]

    index = NeighborIndex(transformed, labels)
    ratios = training_ratios(index, k_best)
    tail = fit_tail(ratios, q_best)
    return OpenSetClassifier(forest=forest, metric=metric_model, index=index,
                             tail=tail, k_neighbors=k_best, alpha=a_best)


# --- single-nearest-neighbor baseline ---------------------------------------

DEFAULT_T_GRID = tuple(round(0.50 + 0.05 * i, 2) for i in range(11))


@dataclass(frozen=True)
class OsnnBaseline:
    """Nearest-neighbor distance-ratio rejector with threshold in (0, 1]."""

    index: NeighborIndex
    threshold: float

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise DataError("threshold must lie in (0, 1]")


def _nn_ratios(index, queries):
    nb_l, nb_d = _neighbor_tables(index, queries)
    t0, rho = kernels.nn_ratio_scan(nb_l, nb_d)
    if np.any(rho < 0):
        raise DataError("index holds a single class; no counter neighbor exists")
    return t0 + 1, rho


def fit_osnn(points, labels, cv_folds=5, t_grid=DEFAULT_T_GRID, seed=0):
    """Choose the rejection threshold on the nearest/counter-nearest ratio.

    Uses the same pseudo-unknown class rotation as the K-neighbor fit when
    3+ classes exist; with 2 classes no rotation is possible and the grid
    midpoint is used.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise DataError("baseline needs at least 2 classes")
    if len(classes) < 3:
        return OsnnBaseline(NeighborIndex(points, labels),
                            t_grid[len(t_grid) // 2])
    plan = _rotation_plan(labels, cv_folds, seed)
    scores = {t: 0.0 for t in t_grid}
    for fit_mask, val_mask, pseudo in plan:
        idx = NeighborIndex(points[fit_mask], labels[fit_mask])
        _, rho = _nn_ratios(idx, points[val_mask])
        is_unknown = labels[val_mask] == pseudo
        for t in t_grid:
            scores[t] += _geo_mean_pr(rho > t, is_unknown) / cv_folds
    best_t = t_grid[0]
    best_score = -np.inf
    for t in t_grid:
        if scores[t] > best_score:
            best_score = scores[t]
            best_t = t
    return OsnnBaseline(NeighborIndex(points, labels), best_t)


def osnn_classify_batch(baseline, queries):
    """Nearest neighbor's label when the nearest/counter ratio stays at or
    under the threshold, unknown otherwise."""
    t_label, rho = _nn_ratios(baseline.index, queries)
    out = np.where(rho <= baseline.threshold, t_label, UNKNOWN_LABEL)
    return out.astype(np.int64)


def osnn_classify(baseline, x):
    return int(osnn_classify_batch(baseline, np.asarray(x).reshape(1, -1))[0])
