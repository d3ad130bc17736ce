"""Experiment configuration: a JSON-mirroring description of one run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .errors import DataError

METHODS = ("closed-set", "osnn", "rf-osnn", "kosnn", "rf-kosnn")

#: methods whose transform comes from the learned metric
METRIC_METHODS = ("rf-osnn", "rf-kosnn")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a pipeline run needs besides the seed list's element.

    ``dataset`` is one of
      {"kind": "builtin", "name": "iris" | "digits"}
      {"kind": "csv", "path": ..., "label_column": ...}
      {"kind": "mixture", "spec": "default"} or an inline component list.
    ``known_classes`` holds label names (strings) or 1-based ids; it is
    ignored for mixtures, whose spec already carries the known set.
    ``forest`` is "table1", "fast", or {"fixed": {...ForestConfig fields}}.
    """

    name: str
    dataset: dict
    method: str = "rf-kosnn"
    known_classes: tuple = ()
    train_fraction: float = 0.8
    forest: object = "table1"
    cv_folds: int = 5
    max_pairs: int = 2000
    metric_max_iter: int = 150
    seeds: tuple = (0,)
    out_dir: str = "out"

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"method must be one of {METHODS}")
        if not self.seeds:
            raise DataError("seeds must be non-empty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "known_classes", tuple(self.known_classes))
        kind = self.dataset.get("kind")
        if kind not in ("builtin", "csv", "mixture"):
            raise DataError("dataset.kind must be builtin, csv, or mixture")
        if kind == "csv" and ("path" not in self.dataset
                              or "label_column" not in self.dataset):
            raise DataError("csv dataset needs path and label_column")
        if kind == "builtin" and self.dataset.get("name") not in ("iris", "digits"):
            raise DataError("builtin dataset name must be iris or digits")
        if kind != "mixture" and not self.known_classes:
            raise DataError("known_classes required for csv/builtin datasets")

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def config_hash(self):
        """Experiment identity: every field except the output location."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(
            json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        return replace(self, **kw)


def config_from_dict(d):
    d = dict(d)
    if "dataset" not in d or "name" not in d:
        raise DataError("config requires at least 'name' and 'dataset'")
    allowed = {f for f in ExperimentConfig.__dataclass_fields__}
    extra = set(d) - allowed
    if extra:
        raise DataError(f"unknown config keys: {sorted(extra)}")
    if "known_classes" in d:
        d["known_classes"] = tuple(d["known_classes"])
    if "seeds" in d:
        d["seeds"] = tuple(d["seeds"])
    return ExperimentConfig(**d)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no such config file: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})")
    return config_from_dict(raw)
