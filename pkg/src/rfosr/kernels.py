"""Hot numeric kernels, JIT-compiled with numba when available.

Every kernel is written as a plain Python/numpy function and compiled with
``@njit`` at import time. Setting ``RFOSR_DISABLE_NUMBA=1`` (or running
without numba installed) keeps the pure-Python versions: same code objects,
identical results, much slower on large inputs. ``benchmarks/bench_kernels.py``
times the two paths against each other.

All kernels take plain ndarrays and scalars so the two paths stay
byte-for-byte interchangeable. Class labels are 0-based here; the public
modules translate from 1-based ids.
"""

from __future__ import annotations

import os

import numpy as np

GINI = 0
ENTROPY = 1
NO_DEPTH_LIMIT = 1 << 30

# Park-Miller MINSTD constants; products stay far below 2**63 so the pure
# path (Python ints) and the jitted path (int64) wrap identically: never.
_PM_MULT = 48271
_PM_MOD = 2147483647


def _pm_next(state):
    return (state * _PM_MULT) % _PM_MOD


def _impurity(counts, total, criterion):
    """Gini or entropy (bits) of an integer class-count vector."""
    if criterion == GINI:
        acc = 0.0
        for c in range(counts.shape[0]):
            p = counts[c] / total
            acc += p * p
        return 1.0 - acc
    acc = 0.0
    for c in range(counts.shape[0]):
        if counts[c] > 0:
            p = counts[c] / total
            acc -= p * np.log2(p)
    return acc


def _impurity_lr(node_counts, left_counts, w_left, w_right, criterion):
    """w_l*impurity(left) + w_r*impurity(right) without materializing right counts."""
    if criterion == GINI:
        sl = 0.0
        sr = 0.0
        for c in range(node_counts.shape[0]):
            lc = left_counts[c]
            rc = node_counts[c] - lc
            sl += lc * lc
            sr += rc * rc
        return (w_left - sl / w_left) + (w_right - sr / w_right)
    hl = 0.0
    hr = 0.0
    for c in range(node_counts.shape[0]):
        lc = left_counts[c]
        rc = node_counts[c] - lc
        if lc > 0:
            p = lc / w_left
            hl -= p * np.log2(p)
        if rc > 0:
            p = rc / w_right
            hr -= p * np.log2(p)
    return w_left * hl + w_right * hr


def _grow_tree(X, y, mult, n_classes, max_features, criterion, max_depth,
               min_samples_leaf, seed):
    """Grow one CART tree on the multiplicity-weighted in-bag sample.

    At each node ``max_features`` candidate features are drawn without
    replacement; every midpoint between consecutive distinct sorted values
    is scored by weighted Gini/entropy. Ties go to the lowest feature index,
    then the lowest threshold. Splitting stops on purity, the depth limit,
    leaves that would fall under ``min_samples_leaf`` total multiplicity,
    or when no split improves impurity.

    Returns (feature, threshold, left, right, counts, node_count) in a flat
    array layout; feature == -1 marks a leaf.
    """
    n_total = X.shape[0]
    n_dims = X.shape[1]

    n_pts = 0
    for i in range(n_total):
        if mult[i] > 0:
            n_pts += 1
    samples = np.empty(n_pts, np.int64)
    k = 0
    for i in range(n_total):
        if mult[i] > 0:
            samples[k] = i
            k += 1

    cap = 2 * n_pts + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    counts = np.zeros((cap, n_classes), np.int64)

    st_node = np.empty(cap, np.int64)
    st_lo = np.empty(cap, np.int64)
    st_hi = np.empty(cap, np.int64)
    st_depth = np.empty(cap, np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_pts
    st_depth[0] = 0
    top = 1
    node_count = 1

    perm = np.empty(n_dims, np.int64)
    vals = np.empty(n_pts, np.float64)
    lcount = np.empty(n_classes, np.int64)
    buf = np.empty(n_pts, np.int64)

    state = seed % (_PM_MOD - 1) + 1

    while top > 0:
        top -= 1
        nid = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        n_node = hi - lo

        w_total = 0
        for k in range(lo, hi):
            s = samples[k]
            counts[nid, y[s]] += mult[s]
            w_total += mult[s]
        c_max = 0
        for c in range(n_classes):
            if counts[nid, c] > c_max:
                c_max = counts[nid, c]
        if (c_max == w_total or depth >= max_depth
                or w_total < 2 * min_samples_leaf or n_node < 2):
            continue

        parent_imp = _impurity(counts[nid], w_total, criterion)

        mf = max_features
        if mf > n_dims:
            mf = n_dims
        for d in range(n_dims):
            perm[d] = d
        for j in range(mf):
            state = _pm_next(state)
            pick = j + state % (n_dims - j)
            tmp = perm[j]
            perm[j] = perm[pick]
            perm[pick] = tmp
        # ascending candidate order makes "lowest feature index" the natural
        # tie-break under strict <
        for j in range(1, mf):
            v = perm[j]
            i2 = j - 1
            while i2 >= 0 and perm[i2] > v:
                perm[i2 + 1] = perm[i2]
                i2 -= 1
            perm[i2 + 1] = v

        best_imp = np.inf
        best_f = -1
        best_thr = 0.0
        for j in range(mf):
            f = perm[j]
            for k in range(n_node):
                vals[k] = X[samples[lo + k], f]
            order = np.argsort(vals[:n_node])
            for c in range(n_classes):
                lcount[c] = 0
            w_left = 0
            for k in range(n_node - 1):
                s = samples[lo + order[k]]
                lcount[y[s]] += mult[s]
                w_left += mult[s]
                v0 = vals[order[k]]
                v1 = vals[order[k + 1]]
                if v0 == v1:
                    continue
                w_right = w_total - w_left
                if w_left < min_samples_leaf or w_right < min_samples_leaf:
                    continue
                w_imp = _impurity_lr(counts[nid], lcount, w_left, w_right,
                                     criterion) / w_total
                if w_imp < best_imp:
                    best_imp = w_imp
                    best_f = f
                    best_thr = 0.5 * (v0 + v1)

        if best_f < 0 or parent_imp - best_imp <= 1e-12:
            continue

        # stable partition keeps the layout identical across both paths
        nl = 0
        for k in range(lo, hi):
            if X[samples[k], best_f] <= best_thr:
                buf[nl] = samples[k]
                nl += 1
        nr = nl
        for k in range(lo, hi):
            if X[samples[k], best_f] > best_thr:
                buf[nr] = samples[k]
                nr += 1
        for k in range(n_node):
            samples[lo + k] = buf[k]

        lid = node_count
        rid = node_count + 1
        node_count += 2
        feature[nid] = best_f
        threshold[nid] = best_thr
        left[nid] = lid
        right[nid] = rid
        st_node[top] = lid
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = rid
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1

    return (feature[:node_count].copy(), threshold[:node_count].copy(),
            left[:node_count].copy(), right[:node_count].copy(),
            counts[:node_count].copy(), node_count)


def _apply_tree(feature, threshold, left, right, X):
    """Route each row of X to its terminal node id (x <= threshold goes left)."""
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        nid = 0
        while feature[nid] >= 0:
            if X[i, feature[nid]] <= threshold[nid]:
                nid = left[nid]
            else:
                nid = right[nid]
        out[i] = nid
    return out


def _proximity_accumulate(leaf_ids, mult, P):
    """Add one tree's geometry-and-accuracy-preserving contributions to P.

    For every out-of-bag sample i (mult == 0) in a leaf, each in-bag
    co-occupant j contributes mult[j] / (total in-bag multiplicity of the
    leaf). Callers divide rows by each sample's out-of-bag tree count.
    """
    n = leaf_ids.shape[0]
    order = np.argsort(leaf_ids)
    a = 0
    while a < n:
        b = a + 1
        la = leaf_ids[order[a]]
        while b < n and leaf_ids[order[b]] == la:
            b += 1
        m_leaf = 0
        for k in range(a, b):
            m_leaf += mult[order[k]]
        if m_leaf > 0:
            inv = 1.0 / m_leaf
            for k in range(a, b):
                i = order[k]
                if mult[i] == 0:
                    for k2 in range(a, b):
                        j = order[k2]
                        if mult[j] > 0:
                            P[i, j] += mult[j] * inv
        a = b


def _ratio_scan(nb_labels, nb_dists, k_neighbors, n_classes):
    """Vote + distance ratio pieces from per-query sorted neighbor tables.

    nb_labels/nb_dists are (Q, n) arrays sorted by ascending distance
    (ties already broken by lowest training index upstream). Returns the
    majority label of the first k (ties to the lowest class), the mean
    distance to those k, and the mean distance to the k nearest rows whose
    label differs from the majority. The counter mean is -1.0 when fewer
    than k counter-label rows exist.
    """
    q_n = nb_labels.shape[0]
    n = nb_labels.shape[1]
    y_star = np.empty(q_n, np.int64)
    d_bar = np.empty(q_n, np.float64)
    d_counter = np.empty(q_n, np.float64)
    votes = np.empty(n_classes, np.int64)
    for qi in range(q_n):
        for c in range(n_classes):
            votes[c] = 0
        acc = 0.0
        for u in range(k_neighbors):
            votes[nb_labels[qi, u]] += 1
            acc += nb_dists[qi, u]
        best = 0
        for c in range(1, n_classes):
            if votes[c] > votes[best]:
                best = c
        y_star[qi] = best
        d_bar[qi] = acc / k_neighbors
        cnt = 0
        acc2 = 0.0
        for u in range(n):
            if nb_labels[qi, u] != best:
                acc2 += nb_dists[qi, u]
                cnt += 1
                if cnt == k_neighbors:
                    break
        if cnt == k_neighbors:
            d_counter[qi] = acc2 / k_neighbors
        else:
            d_counter[qi] = -1.0
    return y_star, d_bar, d_counter


def _nn_ratio_scan(nb_labels, nb_dists):
    """Single-nearest-neighbor distance ratio from sorted neighbor tables.

    t is the global nearest row, u the nearest row with a different label.
    Returns t's label and d(t)/d(u); the ratio is 0 when both distances are
    0 (query sits on coincident points of both labels) and -1.0 when no
    counter-label row exists.
    """
    q_n = nb_labels.shape[0]
    n = nb_labels.shape[1]
    t_label = np.empty(q_n, np.int64)
    rho = np.empty(q_n, np.float64)
    for qi in range(q_n):
        lt = nb_labels[qi, 0]
        dt = nb_dists[qi, 0]
        t_label[qi] = lt
        du = -1.0
        for u in range(1, n):
            if nb_labels[qi, u] != lt:
                du = nb_dists[qi, u]
                break
        if du < 0:
            rho[qi] = -1.0
        elif du == 0.0:
            rho[qi] = 0.0
        else:
            rho[qi] = dt / du
    return t_label, rho


# --- dispatch -------------------------------------------------------------

DISABLE_ENV = "RFOSR_DISABLE_NUMBA"

PY_IMPLS = {
    "grow_tree": _grow_tree,
    "apply_tree": _apply_tree,
    "proximity_accumulate": _proximity_accumulate,
    "ratio_scan": _ratio_scan,
    "nn_ratio_scan": _nn_ratio_scan,
}

NUMBA_ENABLED = False
if os.environ.get(DISABLE_ENV, "0") in ("", "0"):
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    # helpers first so the tree grower binds the compiled versions
    _pm_next = njit(cache=True)(_pm_next)
    _impurity = njit(cache=True)(_impurity)
    _impurity_lr = njit(cache=True)(_impurity_lr)
    _grow_tree = njit(cache=True)(_grow_tree)
    _apply_tree = njit(cache=True)(_apply_tree)
    _proximity_accumulate = njit(cache=True)(_proximity_accumulate)
    _ratio_scan = njit(cache=True)(_ratio_scan)
    _nn_ratio_scan = njit(cache=True)(_nn_ratio_scan)

grow_tree = _grow_tree
apply_tree = _apply_tree
proximity_accumulate = _proximity_accumulate
ratio_scan = _ratio_scan
nn_ratio_scan = _nn_ratio_scan
