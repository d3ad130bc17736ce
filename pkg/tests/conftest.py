import numpy as np
import pytest

from rfosr.dataset import Dataset


@pytest.fixture
def two_blobs():
    """Linearly separable 2-class data in 3 dims."""
    rng = np.random.default_rng(42)
    a = rng.normal(0.0, 1.0, (50, 3))
    b = rng.normal(6.0, 1.0, (50, 3))
    X = np.vstack([a, b])
    y = np.array([1] * 50 + [2] * 50)
    return Dataset(X, y, ("f1", "f2", "f3"), {1: "a", 2: "b"})


@pytest.fixture
def three_blobs():
    """Three well-separated classes in 2 dims."""
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal((0, 0), 0.5, (40, 2)),
                   rng.normal((6, 0), 0.5, (40, 2)),
                   rng.normal((3, 6), 0.5, (40, 2))])
    y = np.repeat([1, 2, 3], 40)
    return Dataset(X, y, ("x", "y"), {1: "a", 2: "b", 3: "c"})


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    names = names or tuple(f"f{i}" for i in range(X.shape[1]))
    classes = {int(c): str(int(c)) for c in np.unique(y)}
    return Dataset(X, y, names, classes)
