"""End-to-end pipeline orchestration and the built-in experiments.

``run_pipeline`` executes one seeded run of one or more methods over a
shared split/forest/metric (the shared stages are seeded independently of
the method list, so a single-method run reproduces the multi-method one
exactly). ``run_experiment`` repeats it over seeds and aggregates.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .bundle import ModelBundle, make_provenance
from .config import METHODS, METRIC_METHODS, ExperimentConfig
from .dataset import (MixtureComponent, MixtureSpec, default_mixture_spec,
                      load_csv, make_open_set_split, standardize, synth_mixture)
from .errors import DataError
from .evaluation import compute_metrics, confusion, aggregate_runs
from .forest import ForestConfig, ForestGrid, fit_forest, grid_search_cv
from .metric import build_pairs, fit_metric, identity_metric
from .osr import fit_kosnn, fit_osnn, classify_batch, osnn_classify_batch
from .proximity import rf_gap, symmetrize

# stage tags keep per-stage RNG streams independent of method selection
_STAGE_SPLIT = 1
_STAGE_GRIDCV = 2
_STAGE_FOREST = 3
_STAGE_PAIRS = 4
_STAGE_KOSNN = 5
_STAGE_OSNN = 6


def stage_seed(seed, tag):
    ss = np.random.SeedSequence(entropy=(int(seed) % (2 ** 63), tag))
    return int(ss.generate_state(1)[0])


def builtin_dataset(name):
    """Load a checked-in CSV snapshot, verifying its recorded checksum."""
    if name not in ("iris", "digits"):
        raise DataError(f"no builtin dataset named {name!r}")
    data_dir = resources.files("rfosr").joinpath("data")
    sums = json.loads(data_dir.joinpath("checksums.json").read_text())
    csv_path = data_dir.joinpath(f"{name}.csv")
    payload = csv_path.read_bytes()
    digest = hashlib.sha256(payload).hexdigest()
    if digest != sums[f"{name}.csv"]:
        raise DataError(f"checksum mismatch for bundled {name}.csv")
    label = "species" if name == "iris" else "digit"
    return load_csv(str(csv_path), label)


def _mixture_from_config(cfg_dataset, seed):
    spec = cfg_dataset.get("spec", "default")
    if spec == "default":
        return default_mixture_spec(seed=seed)
    comps = tuple(MixtureComponent(mean=c["mean"], covariance=c["covariance"],
                                   count=c["count"], class_id=c["class_id"])
                  for c in spec["components"])
    return MixtureSpec(components=comps, known_fraction=spec["known_fraction"],
                       known_classes=frozenset(spec["known_classes"]), seed=seed)


def _resolve_known_ids(data, known):
    by_name = {v: k for k, v in data.class_names.items()}
    ids = set()
    for entry in known:
        if isinstance(entry, int) or (isinstance(entry, str) and entry.isdigit()
                                      and entry not in by_name):
            ids.add(int(entry))
        elif entry in by_name:
            ids.add(by_name[entry])
        else:
            raise DataError(f"unknown class {entry!r}; names are {sorted(by_name)}")
    return ids


def build_split(config, seed):
    kind = config.dataset["kind"]
    if kind == "mixture":
        return synth_mixture(_mixture_from_config(config.dataset,
                                                  stage_seed(seed, _STAGE_SPLIT)))
    if kind == "builtin":
        data = builtin_dataset(config.dataset["name"])
    else:
        data = load_csv(config.dataset["path"], config.dataset["label_column"])
    known = _resolve_known_ids(data, config.known_classes)
    return make_open_set_split(data, known, config.train_fraction,
                               stage_seed(seed, _STAGE_SPLIT))


def _resolve_grid(config, fast):
    spec = config.forest
    if isinstance(spec, dict) and "fixed" in spec:
        return None, ForestConfig(**spec["fixed"])
    if fast or spec == "fast":
        return ForestGrid.fast(), None
    if spec == "table1":
        return ForestGrid.full(), None
    raise DataError(f"unrecognized forest grid spec: {spec!r}")


@dataclass
class PipelineArtifacts:
    """Fitted objects of one seeded run, shared across method heads."""

    split: object
    standardization: object
    train: object
    test: object
    forest_config: ForestConfig
    forest: object
    metric: object
    gp_report: object
    heads: dict  # method -> fitted classifier/baseline or None
    predictions: dict  # method -> label vector on the test set
    reports: dict  # method -> MetricsReport


def run_pipeline(config, seed, methods=None, fast=False):
    """One seeded run: split, standardize, forest (grid or fixed), then the
    requested method heads over shared stages."""
    methods = list(methods) if methods else [config.method]
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}")

    split = build_split(config, seed)
    train, params = standardize(split.train)
    test, _ = standardize(split.test, params)
    n_known = len(split.known_class_ids)

    grid, fixed = _resolve_grid(config, fast)
    if fixed is not None:
        chosen = fixed
    else:
        chosen = grid_search_cv(train, grid, folds=config.cv_folds,
                                seed=stage_seed(seed, _STAGE_GRIDCV))
    forest_config = dataclasses.replace(chosen,
                                        seed=stage_seed(seed, _STAGE_FOREST))
    forest = fit_forest(train, forest_config)

    metric_model = identity_metric(train.n_features)
    gp_report = None
    if any(m in METRIC_METHODS for m in methods):
        prox = symmetrize(rf_gap(forest, train))
        pairs = build_pairs(train, prox, config.max_pairs,
                            stage_seed(seed, _STAGE_PAIRS))
        native_scales = split.train.features.std(axis=0)
        metric_model, gp_report = fit_metric(pairs,
                                             feature_scales=native_scales,
                                             max_iter=config.metric_max_iter)

    heads = {}
    predictions = {}
    reports = {}
    for m in methods:
        if m == "closed-set":
            heads[m] = None
            predictions[m] = forest.predict(test.features)
        elif m in ("kosnn", "rf-kosnn"):
            mm = metric_model if m == "rf-kosnn" else identity_metric(train.n_features)
            clf = fit_kosnn(forest, mm, train, cv_folds=config.cv_folds,
                            seed=stage_seed(seed, _STAGE_KOSNN))
            heads[m] = clf
            predictions[m] = classify_batch(clf, test.features)
        else:  # osnn / rf-osnn
            mm = metric_model if m == "rf-osnn" else identity_metric(train.n_features)
            base = fit_osnn(mm.transform(train.features), train.labels,
                            cv_folds=config.cv_folds,
                            seed=stage_seed(seed, _STAGE_OSNN))
            heads[m] = base
            predictions[m] = osnn_classify_batch(base, mm.transform(test.features))
        reports[m] = compute_metrics(confusion(test.labels, predictions[m], n_known))

    return PipelineArtifacts(split=split, standardization=params, train=train,
                             test=test, forest_config=forest_config,
                             forest=forest, metric=metric_model,
                             gp_report=gp_report, heads=heads,
                             predictions=predictions, reports=reports)


def bundle_from_artifacts(config, seed, method, artifacts):
    """Package one method head of a run into a persistable bundle."""
    train = artifacts.train
    head = artifacts.heads[method]
    metric_model = (artifacts.metric if method in METRIC_METHODS
                    else identity_metric(train.n_features))
    kosnn_k = kosnn_alpha = tail = osnn_threshold = None
    if method in ("kosnn", "rf-kosnn"):
        kosnn_k = head.k_neighbors
        kosnn_alpha = head.alpha
        tail = head.tail
    elif method in ("osnn", "rf-osnn"):
        osnn_threshold = head.threshold
    forest = artifacts.forest if method not in ("osnn", "rf-osnn") else None
    return ModelBundle(
        method=method,
        feature_names=train.feature_names,
        class_names=dict(train.class_names),
        standardization=artifacts.standardization,
        train_features=train.features,
        train_labels=train.labels,
        forest=forest,
        metric=metric_model,
        kosnn_k=kosnn_k,
        kosnn_alpha=kosnn_alpha,
        tail=tail,
        osnn_threshold=osnn_threshold,
        provenance=make_provenance(config, seed),
    )


# --- built-in experiment presets -------------------------------------------

def preset_config(experiment, seeds=(0,), method="rf-kosnn"):
    if experiment == "synthetic":
        return ExperimentConfig(
            name="synthetic", dataset={"kind": "mixture", "spec": "default"},
            method=method, seeds=tuple(seeds), max_pairs=800,
            metric_max_iter=120)
    if experiment == "iris":
        return ExperimentConfig(
            name="iris", dataset={"kind": "builtin", "name": "iris"},
            known_classes=("setosa", "virginica"), train_fraction=0.75,
            method=method, seeds=tuple(seeds), max_pairs=2000,
            metric_max_iter=120)
    if experiment == "digits":
        return ExperimentConfig(
            name="digits", dataset={"kind": "builtin", "name": "digits"},
            known_classes=("0", "1", "2", "3", "4"), train_fraction=0.8,
            method=method, seeds=tuple(seeds), max_pairs=1200,
            metric_max_iter=120)
    raise DataError(f"no experiment preset named {experiment!r}")


def run_experiment(config, n_runs=None, methods=METHODS, fast=False,
                   base_seed=None):
    """Repeat the pipeline over seeds; aggregate each method's metrics.

    Seeds are ``config.seeds`` unless ``n_runs``/``base_seed`` ask for a
    contiguous range.
    """
    if n_runs is not None:
        start = base_seed if base_seed is not None else config.seeds[0]
        seeds = [start + i for i in range(n_runs)]
    else:
        seeds = list(config.seeds)
    per_method = {m: [] for m in methods}
    for s in seeds:
        artifacts = run_pipeline(config, s, methods=methods, fast=fast)
        for m in methods:
            per_method[m].append(artifacts.reports[m])
    return {m: aggregate_runs(reps) for m, reps in per_method.items()}, seeds
