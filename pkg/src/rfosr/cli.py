"""Command-line driver.

Subcommands: synth, fit, eval, repro, export-weights, export-grid.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .bundle import load_bundle, save_bundle
from .config import METHODS, load_config
from .dataset import (load_csv, write_dataset_csv, write_split_manifest)
from .errors import DataError, NumericalError
from .evaluation import (compute_metrics, confusion, decision_grid,
                         write_confusion_csv, write_grid_csv)
from .experiments import (bundle_from_artifacts, build_split, preset_config,
                          run_experiment, run_pipeline)
from .metric import write_weights_csv
from .osr import write_diagnostics_csv
from .reports import format_aggregate, format_method_table, format_report


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_config(args, default_experiment=None):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        experiment = getattr(args, "experiment", None) or default_experiment
        if experiment is None:
            raise UsageError("either --config or --experiment is required")
        cfg = preset_config(experiment)
    if getattr(args, "method", None):
        cfg = cfg.with_overrides(method=args.method)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_overrides(seeds=(args.seed,))
    if getattr(args, "out", None):
        cfg = cfg.with_overrides(out_dir=args.out)
    return cfg


def _out_dir(cfg):
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def cmd_synth(args):
    cfg = _resolve_config(args, default_experiment="synthetic")
    if cfg.dataset.get("kind") != "mixture":
        raise DataError("synth requires a mixture dataset config")
    out = _out_dir(cfg)
    split = build_split(cfg, cfg.seeds[0])
    write_dataset_csv(split.train, os.path.join(out, "train.csv"))
    write_dataset_csv(split.test, os.path.join(out, "test.csv"))
    write_split_manifest(split, os.path.join(out, "split_manifest.csv"))
    print(f"wrote train.csv ({split.train.n_samples} rows), "
          f"test.csv ({split.test.n_samples} rows), split_manifest.csv to {out}")
    return 0


def cmd_fit(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    seed = cfg.seeds[0]
    artifacts = run_pipeline(cfg, seed, methods=[cfg.method], fast=args.fast)
    bundle = bundle_from_artifacts(cfg, seed, cfg.method, artifacts)
    bundle_path = os.path.join(out, "model_bundle.npz")
    save_bundle(bundle, bundle_path)

    log_lines = [
        f"config_hash: {cfg.config_hash()}",
        f"seed: {seed}",
        f"method: {cfg.method}",
        f"forest: {artifacts.forest_config}",
    ]
    if artifacts.gp_report is not None:
        rep = artifacts.gp_report
        log_lines.append(
            f"metric fit: lml {rep.initial_lml:.4f} -> {rep.final_lml:.4f} "
            f"in {rep.iterations} iterations (converged={rep.converged})")
    head = artifacts.heads[cfg.method]
    if cfg.method in ("kosnn", "rf-kosnn"):
        log_lines.append(f"kosnn: k={head.k_neighbors} alpha={head.alpha} "
                         f"t_r={head.tail.t_r:.6f} p_exceed={head.tail.p_exceed:.6f}")
    elif cfg.method in ("osnn", "rf-osnn"):
        log_lines.append(f"osnn threshold: {head.threshold}")
    with open(os.path.join(out, "fit_log.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(log_lines) + "\n")
    print(f"wrote {bundle_path}")
    return 0


def cmd_eval(args):
    bundle = load_bundle(args.bundle)
    data = load_csv(args.test, args.label_column)
    if tuple(data.feature_names) != tuple(bundle.feature_names):
        raise DataError("test CSV columns do not match the bundle's features")
    true_labels = bundle.map_labels(
        [data.class_names[int(l)] for l in data.labels])
    preds = bundle.predict(data.features)
    cm = confusion(true_labels, preds, bundle.n_known)
    report = compute_metrics(cm)

    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    header = {
        "config_hash": (bundle.provenance or {}).get("config_hash", "unknown"),
        "seed": (bundle.provenance or {}).get("seed", "unknown"),
        "method": bundle.method,
    }
    with open(os.path.join(out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_report(report, header))
    write_confusion_csv(cm, os.path.join(out, "confusion.csv"), bundle.class_names)
    if bundle.method in ("kosnn", "rf-kosnn"):
        write_diagnostics_csv(bundle.open_set_classifier(),
                              bundle.standardization.apply(data.features),
                              os.path.join(out, "diagnostics.csv"))
    if data.n_features == 2:
        _write_decision_grid(bundle, data.features, args.resolution,
                             os.path.join(out, "decision_grid.csv"))
    print(format_report(report, header), end="")
    return 0


def _grid_bounds(features, margin=0.1):
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    pad = (hi - lo) * margin
    return (float(lo[0] - pad[0]), float(hi[0] + pad[0]),
            float(lo[1] - pad[1]), float(hi[1] + pad[1]))


def _write_decision_grid(bundle, raw_features, resolution, path):
    grid = decision_grid(bundle.predict, _grid_bounds(raw_features), resolution)
    write_grid_csv(grid, path)


def cmd_repro(args):
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    aggregates, seeds = run_experiment(cfg, n_runs=args.runs, fast=args.fast)
    header = {"config_hash": cfg.config_hash(), "experiment": cfg.name,
              "seeds": ",".join(str(s) for s in seeds)}
    table = format_method_table(aggregates, header)
    with open(os.path.join(out, "repro_table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    with open(os.path.join(out, "repro_metrics.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        from .evaluation import METRIC_FIELDS
        w.writerow(["method"] + [f"{f}_{s}" for f in METRIC_FIELDS
                                 for s in ("mean", "std")])
        for method, agg in aggregates.items():
            row = [method]
            for f in METRIC_FIELDS:
                row += [repr(agg.mean[f]), repr(agg.std[f])]
            w.writerow(row)
    for method, agg in aggregates.items():
        path = os.path.join(out, f"aggregate_{method}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_aggregate(agg, {**header, "method": method}))
    print(table, end="")
    return 0


def cmd_export_weights(args):
    bundle = load_bundle(args.bundle)
    out = args.out or "weights.csv"
    write_weights_csv(bundle.metric, bundle.feature_names, out)
    print(f"wrote {out}")
    return 0


def cmd_export_grid(args):
    bundle = load_bundle(args.bundle)
    data = load_csv(args.test, args.label_column)
    if data.n_features != 2:
        raise DataError("decision grids require exactly 2 feature columns")
    out = args.out or "decision_grid.csv"
    _write_decision_grid(bundle, data.features, args.resolution, out)
    print(f"wrote {out}")
    return 0


def build_parser():
    p = _Parser(prog="rfosr",
                description="Open-set recognition for random forests")

    def add_common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None)
        if config:
            sp.add_argument("--config", type=str, default=None)
        sp.add_argument("--fast", action="store_true",
                        help="use the reduced forest grid")
        sp.add_argument("--threads", type=int, default=None)

    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate the synthetic mixture dataset")
    add_common(sp)

    sp = sub.add_parser("fit", help="fit a model bundle")
    add_common(sp)
    sp.add_argument("--experiment", choices=("synthetic", "iris", "digits"))
    sp.add_argument("--method", choices=METHODS)

    sp = sub.add_parser("eval", help="evaluate a bundle on a test CSV")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--label-column", default="label")
    sp.add_argument("--resolution", type=int, default=200)
    sp.add_argument("--out", type=str, default=None)
    sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("repro", help="repeat an experiment over seeds")
    add_common(sp)
    sp.add_argument("--experiment", choices=("synthetic", "iris", "digits"))
    sp.add_argument("--runs", type=int, default=10)

    sp = sub.add_parser("export-weights", help="write learned weights as CSV")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--out", type=str, default=None)
    sp.add_argument("--threads", type=int, default=None)

    sp = sub.add_parser("export-grid", help="write a 2-D decision grid as CSV")
    sp.add_argument("--bundle", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--label-column", default="label")
    sp.add_argument("--resolution", type=int, default=200)
    sp.add_argument("--out", type=str, default=None)
    sp.add_argument("--threads", type=int, default=None)

    return p


_COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "repro": cmd_repro,
    "export-weights": cmd_export_weights,
    "export-grid": cmd_export_grid,
}


def _apply_threads(args):
    n = getattr(args, "threads", None)
    if n:
        os.environ["OMP_NUM_THREADS"] = str(n)
        try:
            import numba
            numba.set_num_threads(n)
        except (ImportError, ValueError):
            pass


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
