"""Model bundle: one-file persistence of a fitted pipeline.

A bundle is an ``.npz`` holding all numeric arrays plus a JSON metadata
blob. Round-trips are exact: arrays are stored in their native dtypes and
scalar floats travel through JSON's repr round-trip, so a re-loaded bundle
reproduces identical predictions.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .dataset import StandardizationParams
from .errors import DataError
from .forest import Forest, ForestConfig, forest_from_arrays, forest_to_arrays
from .metric import MetricModel, identity_metric
from .osr import (NeighborIndex, OpenSetClassifier, OsnnBaseline, TailModel,
                  classify_batch, osnn_classify_batch)

SCHEMA_VERSION = 1


@dataclass
class ModelBundle:
    method: str
    feature_names: tuple
    class_names: dict  # id -> name, known classes only
    standardization: StandardizationParams
    train_features: np.ndarray  # standardized
    train_labels: np.ndarray
    forest: Forest | None
    metric: MetricModel
    kosnn_k: int | None = None
    kosnn_alpha: float | None = None
    tail: TailModel | None = None
    osnn_threshold: float | None = None
    provenance: dict | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def n_known(self):
        return len(self.class_names)

    def map_labels(self, names):
        """Label-name strings to split-local ids; unseen names become 0."""
        by_name = {v: k for k, v in self.class_names.items()}
        return np.array([by_name.get(str(n), 0) for n in names], dtype=np.int64)

    def open_set_classifier(self):
        if self.kosnn_k is None:
            raise DataError(f"bundle method {self.method!r} has no neighborhood head")
        index = NeighborIndex(self.metric.transform(self.train_features),
                              self.train_labels)
        return OpenSetClassifier(forest=self.forest, metric=self.metric,
                                 index=index, tail=self.tail,
                                 k_neighbors=self.kosnn_k, alpha=self.kosnn_alpha)

    def osnn_baseline(self):
        if self.osnn_threshold is None:
            raise DataError(f"bundle method {self.method!r} has no baseline head")
        return OsnnBaseline(NeighborIndex(self.metric.transform(self.train_features),
                                          self.train_labels),
                            self.osnn_threshold)

    def predict(self, raw_features):
        """Classify raw-feature rows end to end (standardize, then head)."""
        X = self.standardization.apply(raw_features)
        if self.method == "closed-set":
            return self.forest.predict(X)
        if self.method in ("kosnn", "rf-kosnn"):
            return classify_batch(self.open_set_classifier(), X)
        return osnn_classify_batch(self.osnn_baseline(),
                                   self.metric.transform(X))


def make_provenance(config, seed):
    return {"config_hash": config.config_hash(), "seed": int(seed),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S")}


def save_bundle(bundle, path):
    arrays = {
        "std_means": bundle.standardization.means,
        "std_stds": bundle.standardization.std_devs,
        "train_features": bundle.train_features,
        "train_labels": bundle.train_labels,
        "metric_log_weights": bundle.metric.log_weights,
    }
    meta = {
        "schema_version": bundle.schema_version,
        "method": bundle.method,
        "feature_names": list(bundle.feature_names),
        "class_names": {str(k): v for k, v in bundle.class_names.items()},
        "metric_log_signal": bundle.metric.log_signal,
        "metric_log_noise": bundle.metric.log_noise,
        "provenance": bundle.provenance or {},
        "has_forest": bundle.forest is not None,
    }
    if bundle.forest is not None:
        arrays.update(forest_to_arrays(bundle.forest))
        cfg = bundle.forest.config
        meta["forest_config"] = {
            "n_trees": cfg.n_trees, "max_depth": cfg.max_depth,
            "max_features": cfg.max_features, "criterion": cfg.criterion,
            "min_samples_leaf": cfg.min_samples_leaf, "seed": cfg.seed,
        }
        meta["forest_n_classes"] = bundle.forest.n_classes
        meta["forest_n_features"] = bundle.forest.n_features
    if bundle.kosnn_k is not None:
        t = bundle.tail
        meta["kosnn"] = {
            "k": bundle.kosnn_k, "alpha": bundle.kosnn_alpha,
            "t_r": t.t_r, "tau": t.tau, "gamma": t.gamma,
            "p_exceed": t.p_exceed, "n_excesses": t.n_excesses,
            "empirical": t.empirical,
        }
        if t.empirical and t.excesses is not None:
            arrays["tail_excesses"] = t.excesses
    if bundle.osnn_threshold is not None:
        meta["osnn_threshold"] = bundle.osnn_threshold
    np.savez_compressed(path, meta=np.array(json.dumps(meta, sort_keys=True)),
                        **arrays)


def load_bundle(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except FileNotFoundError:
        raise DataError(f"no such bundle: {path}")
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported bundle schema {meta.get('schema_version')}")
    forest = None
    if meta["has_forest"]:
        fc = meta["forest_config"]
        forest = forest_from_arrays(
            arrays, ForestConfig(**fc), meta["forest_n_classes"],
            meta["forest_n_features"])
    metric = MetricModel(arrays["metric_log_weights"],
                         meta["metric_log_signal"], meta["metric_log_noise"])
    tail = None
    kosnn_k = kosnn_alpha = None
    if "kosnn" in meta:
        km = meta["kosnn"]
        kosnn_k = km["k"]
        kosnn_alpha = km["alpha"]
        tail = TailModel(t_r=km["t_r"], tau=km["tau"], gamma=km["gamma"],
                         p_exceed=km["p_exceed"], n_excesses=km["n_excesses"],
                         empirical=km["empirical"],
                         excesses=arrays.get("tail_excesses"))
    return ModelBundle(
        method=meta["method"],
        feature_names=tuple(meta["feature_names"]),
        class_names={int(k): v for k, v in meta["class_names"].items()},
        standardization=StandardizationParams(arrays["std_means"], arrays["std_stds"]),
        train_features=arrays["train_features"],
        train_labels=arrays["train_labels"],
        forest=forest,
        metric=metric,
        kosnn_k=kosnn_k,
        kosnn_alpha=kosnn_alpha,
        tail=tail,
        osnn_threshold=meta.get("osnn_threshold"),
        provenance=meta.get("provenance"),
        schema_version=meta["schema_version"],
    )
