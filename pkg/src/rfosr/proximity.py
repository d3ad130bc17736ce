"""Forest proximities built from out-of-bag co-occupancy of terminal nodes.

For a sample i and tree t where i is out of bag, every in-bag sample j
sharing i's leaf contributes its bootstrap multiplicity divided by the
leaf's total in-bag multiplicity; averaging over i's out-of-bag trees
gives a row-stochastic similarity (rows sum to 1 off the diagonal).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError

RAW = "raw"
SYMMETRIZED = "symmetrized"


@dataclass(frozen=True)
class ProximityMatrix:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 2 or vals.shape[0] != vals.shape[1]:
            raise DataError("proximity matrix must be square")
        if self.kind not in (RAW, SYMMETRIZED):
            raise DataError(f"kind must be {RAW!r} or {SYMMETRIZED!r}")

    @property
    def n(self):
        return self.values.shape[0]


def rf_gap(forest, train):
    """Raw proximity matrix on the training set.

    Diagonal entries are 0 (a sample is never in-bag in its own
    out-of-bag trees). Rows whose sample was in-bag in every tree are
    zeroed with a warning; with 100+ trees this is vanishingly rare.
    """
    boot = forest.bootstrap.multiplicities
    n = train.n_samples
    if boot.shape[1] != n:
        raise DataError("forest bootstrap size does not match training set")
    P = np.zeros((n, n), dtype=np.float64)
    X = np.ascontiguousarray(train.features)
    for t, tree in enumerate(forest.trees):
        leaf_ids = tree.apply(X)
        kernels.proximity_accumulate(leaf_ids, boot[t], P)
    s_counts = forest.bootstrap.oob_tree_counts()
    empty = s_counts == 0
    if np.any(empty):
        warnings.warn(f"{int(empty.sum())} samples were in-bag in every tree; "
                      "their proximity rows are zero")
        P[empty] = 0.0
    nonempty = ~empty
    P[nonempty] /= s_counts[nonempty, None]
    return ProximityMatrix(P, RAW)


def symmetrize(pm):
    """(P + P^T) / 2; exactly symmetric."""
    return ProximityMatrix((pm.values + pm.values.T) / 2.0, SYMMETRIZED)


def write_proximity_csv(pm, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        for row in pm.values:
            w.writerow([repr(float(v)) for v in row])
