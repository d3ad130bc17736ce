"""Plain-text report files with a stable, diffable schema.

Single-run reports carry ``metric: value`` lines; aggregates carry
``metric: mean std``. Key order is fixed so identical configurations
produce identical bytes.
"""

from __future__ import annotations

from .evaluation import METRIC_FIELDS

SCHEMA = "rfosr-report/1"


def format_report(report, header):
    """Render one MetricsReport; ``header`` is an ordered dict of
    context lines (config_hash, seed, method, ...)."""
    lines = [f"schema: {SCHEMA}"]
    for k, v in header.items():
        lines.append(f"{k}: {v}")
    lines.append(f"degenerate: {str(report.degenerate).lower()}")
    for f in METRIC_FIELDS:
        lines.append(f"{f}: {getattr(report, f):.6f}")
    return "\n".join(lines) + "\n"


def format_aggregate(agg, header):
    lines = [f"schema: {SCHEMA}"]
    for k, v in header.items():
        lines.append(f"{k}: {v}")
    lines.append(f"runs: {agg.n_runs}")
    for f in METRIC_FIELDS:
        lines.append(f"{f}: {agg.mean[f]:.6f} {agg.std[f]:.6f}")
    return "\n".join(lines) + "\n"


def format_method_table(aggregates, header):
    """Table-shaped summary: one row per method, one column per metric,
    cells as mean +/- std percentages."""
    lines = [f"schema: rfosr-table/1"]
    for k, v in header.items():
        lines.append(f"{k}: {v}")
    cols = ["method"] + list(METRIC_FIELDS)
    widths = [max(len(c), 16) for c in cols]
    widths[0] = max(len(m) for m in aggregates) + 2
    lines.append("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for method, agg in aggregates.items():
        cells = [method.ljust(widths[0])]
        for f, w in zip(METRIC_FIELDS, widths[1:]):
            cells.append(f"{100 * agg.mean[f]:6.2f} +/- {100 * agg.std[f]:5.2f}".ljust(w))
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of format_report/format_aggregate, for tests and tooling."""
    out = {}
    for line in text.strip().splitlines():
        key, _, val = line.partition(":")
        parts = val.split()
        if key in METRIC_FIELDS:
            out[key] = tuple(float(p) for p in parts) if len(parts) > 1 else float(parts[0])
        else:
            out[key] = val.strip()
    return out
