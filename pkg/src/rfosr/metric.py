"""Diagonal Mahalanobis metric distilled from proximities via GP evidence.

Pairs of training points become regression data: the input is the vector
of per-dimension absolute differences, the target is one minus the
symmetrized proximity. A zero-mean GP with an automatic-relevance
squared-exponential kernel models that map; maximizing the log marginal
likelihood over the per-dimension scales yields the diagonal transform
x -> exp(w) * x used downstream.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import DataError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))

#: diagonal jitter ladder: one clean attempt, then three retries
_JITTERS = (0.0, 1e-8, 1e-6, 1e-4)


@dataclass(frozen=True)
class PairSample:
    """One training pair: per-dimension |x_i - x_j| and its proximity gap."""

    i: int
    j: int
    d_vec: np.ndarray
    target: float

    def __post_init__(self):
        object.__setattr__(self, "d_vec", np.asarray(self.d_vec, dtype=np.float64))
        if self.i == self.j:
            raise DataError("pair indices must differ")
        if np.any(self.d_vec < 0):
            raise DataError("pair feature vector must be non-negative")


@dataclass(frozen=True)
class MetricModel:
    """log-parameterized diagonal transform plus GP signal/noise scales."""

    log_weights: np.ndarray
    log_signal: float
    log_noise: float

    def __post_init__(self):
        object.__setattr__(self, "log_weights",
                           np.asarray(self.log_weights, dtype=np.float64))

    @property
    def n_dims(self):
        return self.log_weights.shape[0]

    @property
    def weights(self):
        return np.exp(self.log_weights)

    @property
    def signal_std(self):
        return float(np.exp(self.log_signal))

    @property
    def noise_std(self):
        return float(np.exp(self.log_noise))

    def transform(self, x):
        """x -> exp(w) * x, broadcasting over leading axes."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_dims:
            raise DataError(f"expected {self.n_dims} dims, got {x.shape[-1]}")
        return x * self.weights


def identity_metric(n_dims):
    """Unit transform with neutral GP scales; used by baselines."""
    return MetricModel(np.zeros(n_dims), 0.0, 0.0)


def transform(model, x):
    return model.transform(x)


@dataclass
class GPFitReport:
    initial_lml: float
    final_lml: float
    iterations: int
    pair_count: int
    converged: bool


def build_pairs(train, proximities, max_pairs, seed):
    """Pair samples with targets 1 - P(i, j).

    All unordered pairs when they fit in ``max_pairs``; otherwise a seeded
    subsample stratified half same-class / half cross-class, falling back
    proportionally when one stratum runs out.
    """
    if train.n_samples < 2:
        raise DataError("need at least 2 samples to build pairs")
    if max_pairs < 2:
        raise DataError("max_pairs must be >= 2")
    if proximities.kind != "symmetrized":
        raise DataError("pair targets require the symmetrized proximity matrix")
    X = train.features
    y = train.labels
    iu, ju = np.triu_indices(train.n_samples, k=1)
    total = iu.shape[0]
    if total > max_pairs:
        same = y[iu] == y[ju]
        idx_same = np.nonzero(same)[0]
        idx_cross = np.nonzero(~same)[0]
        want_same = max_pairs // 2
        want_cross = max_pairs - want_same
        if len(idx_same) < want_same:
            want_same = len(idx_same)
            want_cross = min(max_pairs - want_same, len(idx_cross))
        elif len(idx_cross) < want_cross:
            want_cross = len(idx_cross)
            want_same = min(max_pairs - want_cross, len(idx_same))
        rng = np.random.default_rng(seed)
        keep = np.concatenate([
            rng.choice(idx_same, size=want_same, replace=False),
            rng.choice(idx_cross, size=want_cross, replace=False),
        ])
        keep.sort()
        iu, ju = iu[keep], ju[keep]
    P = proximities.values
    out = []
    for a, b in zip(iu, ju):
        out.append(PairSample(int(a), int(b), np.abs(X[a] - X[b]),
                              float(1.0 - P[a, b])))
    return out


def _stack(pairs):
    if not pairs:
        raise DataError("empty pair list")
    d = np.stack([p.d_vec for p in pairs])
    y = np.array([p.target for p in pairs], dtype=np.float64)
    return d, y


def kernel_eval(model, d_a, d_b):
    """sigma_f^2 * exp(-0.5 * sum_k exp(2 w_k) (d_a[k] - d_b[k])^2)."""
    d_a = np.asarray(d_a, dtype=np.float64)
    d_b = np.asarray(d_b, dtype=np.float64)
    if d_a.shape != (model.n_dims,) or d_b.shape != (model.n_dims,):
        raise DataError("pair features must match the model dimension")
    sq = np.sum(np.exp(2.0 * model.log_weights) * (d_a - d_b) ** 2)
    return float(np.exp(2.0 * model.log_signal) * np.exp(-0.5 * sq))


def _kernel_matrix(model, d_mat):
    with np.errstate(over="ignore", under="ignore"):
        u = d_mat * model.weights
        sq = np.sum(u ** 2, axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (u @ u.T)
        np.clip(d2, 0.0, None, out=d2)
        # exact symmetry and an exact zero diagonal keep the factorization honest
        d2 = (d2 + d2.T) / 2.0
        np.fill_diagonal(d2, 0.0)
        return np.exp(2.0 * model.log_signal) * np.exp(-0.5 * d2)


def _factorize(K):
    n = K.shape[0]
    last = None
    for jit in _JITTERS:
        try:
            return np.linalg.cholesky(K + jit * np.eye(n) if jit else K)
        except np.linalg.LinAlgError as exc:
            last = exc
    raise NumericalError(
        f"kernel matrix not positive definite after jitter retries up to {_JITTERS[-1]}"
    ) from last


def _lml_parts(model, d_mat, y):
    n = y.shape[0]
    K = _kernel_matrix(model, d_mat)
    with np.errstate(over="ignore"):
        K[np.diag_indices(n)] += np.exp(2.0 * model.log_noise)
    if not np.all(np.isfinite(K)):
        raise NumericalError("kernel matrix overflowed at the current scales")
    L = _factorize(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = (-0.5 * float(y @ alpha)
           - float(np.sum(np.log(np.diag(L))))
           - 0.5 * n * LOG_2PI)
    return lml, L, alpha


def log_marginal_likelihood(model, pairs):
    """Evidence of the pair targets under the current hyperparameters,
    evaluated through a Cholesky factor (never an explicit inverse)."""
    d_mat, y = _stack(pairs)
    lml, _, _ = _lml_parts(model, d_mat, y)
    return lml


def lml_gradient(model, pairs):
    """Analytic evidence gradient, ordered (log_weights..., log_signal,
    log_noise).

    Uses 0.5 * tr((aa^T - K^{-1}) dK/dtheta) with a = K^{-1} y, chain-ruled
    through the log parameterization. The per-dimension trace reduces to
    two matrix products instead of one n x n slice per dimension.
    """
    d_mat, y = _stack(pairs)
    n = y.shape[0]
    K_ff = _kernel_matrix(model, d_mat)
    K = K_ff + np.exp(2.0 * model.log_noise) * np.eye(n)
    L = _factorize(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    K_inv = cho_solve((L, True), np.eye(n), check_finite=False)
    B = np.outer(alpha, alpha) - K_inv

    C = B * K_ff
    row = C.sum(axis=1)
    G = C @ d_mat
    # sum_ab C_ab (d_a[k]-d_b[k])^2 = 2*(sum_a d_ak^2 row_a - d_k' C d_k)
    quad = (d_mat ** 2 * row[:, None]).sum(axis=0) - np.einsum("nk,nk->k", d_mat, G)
    grad_w = -np.exp(2.0 * model.log_weights) * quad
    grad_signal = float(C.sum())
    grad_noise = float(np.exp(2.0 * model.log_noise) * np.trace(B))
    return np.concatenate([grad_w, [grad_signal, grad_noise]])


def _pack(model):
    return np.concatenate([model.log_weights, [model.log_signal, model.log_noise]])


def _unpack(theta, n_dims):
    return MetricModel(theta[:n_dims].copy(), float(theta[n_dims]),
                       float(theta[n_dims + 1]))


def initial_model(pairs, feature_scales=None):
    """Scale-matched start: signal at the target spread, noise a tenth of
    it (with floors for degenerate targets).

    ``feature_scales`` (the features' standard deviations on their native,
    pre-standardization scale) seeds the weights at log(scale/geomean).
    This makes the fit equivalent to learning the metric on the native
    scale: an ARD kernel on raw features with weights u is the kernel on
    standardized features with weights u + log(scale). It matters because
    dimensions whose pair distances rarely vary get almost no evidence
    gradient; started at unit weight they stay frozen there and a
    near-constant column, amplified by standardization, would dominate the
    learned transform. Started at its native scale, a frozen dimension
    keeps its natural (negligible) influence instead.
    """
    d_mat, y = _stack(pairs)
    n_dims = d_mat.shape[1]
    spread = float(np.std(y))
    sig = max(spread, 1e-3)
    if feature_scales is None:
        w0 = np.zeros(n_dims)
    else:
        scales = np.asarray(feature_scales, dtype=np.float64).copy()
        if scales.shape != (n_dims,):
            raise DataError("feature_scales length does not match pairs")
        positive = scales[scales > 0]
        if positive.size == 0:
            raise DataError("feature_scales must contain a positive entry")
        scales = np.maximum(scales, 1e-6 * float(np.median(positive)))
        w0 = np.log(scales) - float(np.mean(np.log(scales)))
    return MetricModel(w0, float(np.log(sig)),
                       float(np.log(max(0.1 * spread, 1e-4))))


def fit_metric(pairs, init=None, *, feature_scales=None, max_iter=150,
               grad_tol=1e-3, min_improvement=1e-8, init_step=0.1,
               max_step=2.0, rms_decay=0.9, rms_damping=0.02):
    """Safeguarded first-order ascent on the evidence.

    The raw gradient is rescaled per coordinate by a running RMS of its
    history (a positive diagonal preconditioner, so the direction stays an
    ascent direction); ``rms_damping`` floors the rescaling relative to the
    largest coordinate so that dimensions with negligible gradient move
    negligibly instead of taking noise-sized unit steps. Steps that would
    decrease the objective are halved away; accepted steps grow the step
    size. Stops on a small gradient norm, a sub-threshold improvement, the
    iteration budget, or a stalled step. Returns the best-seen model, so
    the report's final value never drops below the initial one.
    """
    d_mat, y = _stack(pairs)
    n_dims = d_mat.shape[1]
    model = init if init is not None else initial_model(pairs, feature_scales)
    if model.n_dims != n_dims:
        raise DataError("init model dimension does not match pairs")

    theta = _pack(model)
    try:
        lml = log_marginal_likelihood(model, pairs)
    except NumericalError:
        lml = np.nan
    if not np.isfinite(lml):
        raise NumericalError(
            f"non-finite evidence at init: log_signal={model.log_signal}, "
            f"log_noise={model.log_noise}")
    initial_lml = lml
    best_theta, best_lml = theta.copy(), lml
    grad = lml_gradient(model, pairs)
    rms = grad ** 2
    step = init_step
    iters = 0

    while iters < max_iter:
        gnorm = float(np.linalg.norm(grad))
        if gnorm < grad_tol:
            break
        scale = np.sqrt(rms)
        direction = grad / (scale + rms_damping * float(scale.max()) + 1e-12)
        accepted = False
        new_theta = theta
        new_lml = lml
        while step >= 1e-14:
            cand = theta + step * direction
            try:
                cand_lml = log_marginal_likelihood(_unpack(cand, n_dims), pairs)
            except NumericalError:
                cand_lml = -np.inf
            if np.isfinite(cand_lml) and cand_lml > lml:
                new_theta, new_lml = cand, cand_lml
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = new_lml - lml
        theta, lml = new_theta, new_lml
        if lml > best_lml:
            best_theta, best_lml = theta.copy(), lml
        iters += 1
        grad = lml_gradient(_unpack(theta, n_dims), pairs)
        rms = rms_decay * rms + (1.0 - rms_decay) * grad ** 2
        step = min(step * 1.25, max_step)
        if improvement < min_improvement:
            break

    final_model = _unpack(best_theta, n_dims)
    final_grad_norm = float(np.linalg.norm(lml_gradient(final_model, pairs)))
    report = GPFitReport(initial_lml=initial_lml, final_lml=best_lml,
                         iterations=iters, pair_count=len(pairs),
                         converged=final_grad_norm < grad_tol)
    return final_model, report


def write_weights_csv(model, feature_names, path):
    """Per-dimension transform weights exp(w_k), keyed by feature name."""
    if len(feature_names) != model.n_dims:
        raise DataError("feature_names length does not match model dimension")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "weight"])
        for name, wk in zip(feature_names, model.weights):
            w.writerow([name, repr(float(wk))])
