"""Open-set recognition for random forests.

Train a closed-set CART forest, extract geometry-preserving proximities
from its out-of-bag structure, distill them into a diagonal Mahalanobis
transform by maximizing Gaussian-process evidence over pairwise distance
features, and reject test points as "unknown" when their nearest-neighbor
distance ratio lands too far in the calibrated tail.
"""

from .dataset import (Dataset, MixtureComponent, MixtureSpec, OpenSetSplit,
                      StandardizationParams, UNKNOWN_LABEL,
                      default_mixture_spec, load_csv, make_open_set_split,
                      standardize, synth_mixture)
from .errors import DataError, NumericalError
from .evaluation import (ConfusionMatrix, MetricsReport, aggregate_runs,
                         compute_metrics, confusion, decision_grid)
from .forest import (Forest, ForestConfig, ForestGrid, fit_forest, fit_tree,
                     grid_search_cv, oob_predict)
from .metric import (GPFitReport, MetricModel, PairSample, build_pairs,
                     fit_metric, identity_metric, kernel_eval,
                     lml_gradient, log_marginal_likelihood, transform)
from .osr import (KosnnGrids, NeighborIndex, OpenSetClassifier, OsnnBaseline,
                  TailModel, classify, classify_batch, counter_distance,
                  distance_ratio, exceedance_prob, fit_gpd, fit_kosnn,
                  fit_osnn, knn_label_and_distance, osnn_classify,
                  osnn_classify_batch, training_ratios)
from .proximity import ProximityMatrix, rf_gap, symmetrize

__version__ = "0.1.0"

__all__ = [
    "Dataset", "MixtureComponent", "MixtureSpec", "OpenSetSplit",
    "StandardizationParams", "UNKNOWN_LABEL", "default_mixture_spec",
    "load_csv", "make_open_set_split", "standardize", "synth_mixture",
    "DataError", "NumericalError",
    "ConfusionMatrix", "MetricsReport", "aggregate_runs", "compute_metrics",
    "confusion", "decision_grid",
    "Forest", "ForestConfig", "ForestGrid", "fit_forest", "fit_tree",
    "grid_search_cv", "oob_predict",
    "GPFitReport", "MetricModel", "PairSample", "build_pairs", "fit_metric",
    "identity_metric", "kernel_eval", "lml_gradient",
    "log_marginal_likelihood", "transform",
    "KosnnGrids", "NeighborIndex", "OpenSetClassifier", "OsnnBaseline",
    "TailModel", "classify", "classify_batch", "counter_distance",
    "distance_ratio", "exceedance_prob", "fit_gpd", "fit_kosnn", "fit_osnn",
    "knn_label_and_distance", "osnn_classify", "osnn_classify_batch",
    "training_ratios",
    "ProximityMatrix", "rf_gap", "symmetrize",
    "__version__",
]
