"""Before/after fairness audits of fitted models."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .constraint import ConstrainedTree, z_matrix_for
from .data import Dataset, as_query
from .groupmass import MassEstimator
from .kernelgp import GpModel


def _members(model) -> list:
    if isinstance(model, ConstrainedTree):
        return [model]
    return list(getattr(model, "members", []))


def model_pairs(model) -> tuple:
    if isinstance(model, GpModel):
        return model.pairs
    members = _members(model)
    return members[0].pairs if members else ()


def training_residuals(model) -> list[float]:
    """Largest ``|z_k @ f|`` over members, per constraint column.

    These are measured against the masses stored at constraint time.
    """
    if isinstance(model, GpModel):
        return [abs(model.system.constraint_value())] if model.measure is not None else []
    members = _members(model)
    if not members or members[0].n_constraints == 0:
        return []
    res = np.abs(np.array([m.residuals() for m in members]))
    return res.max(axis=0).tolist()


def _histograms(values: dict, bins: int) -> tuple[np.ndarray, dict]:
    pooled = np.concatenate([v for v in values.values() if v.size]) if values else np.zeros(0)
    lo, hi = (float(pooled.min()), float(pooled.max())) if pooled.size else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return edges, {k: np.histogram(v, bins=edges)[0] for k, v in values.items()}


def audit(model, data: Dataset, pairs=None, hist_bins: int = 20, estimator: MassEstimator | None = None) -> dict:
    """Group means before and after correction, residuals and histograms.

    ``pairs`` defaults to the model's own constraint pairs. For a model
    without constraints the residual is ``z @ f`` of the raw leaf means,
    with ``z`` measured on ``data``.
    """
    pairs = tuple(pairs) if pairs else model_pairs(model)
    pairs = tuple((str(as_query(a)), str(as_query(b))) for a, b in pairs)
    before = model.predict_unconstrained(data.features)
    after = model.predict(data.features)

    queries = []
    for a, b in pairs:
        for q in (a, b):
            if q not in queries:
                queries.append(q)

    groups = {}
    hist_values = {}
    for q in queries:
        rows = as_query(q).select(data, require_nonempty=False)
        groups[q] = {
            "n": int(rows.size),
            "mean_before": float(before[rows].mean()) if rows.size else math.nan,
            "mean_after": float(after[rows].mean()) if rows.size else math.nan,
        }
        hist_values[(q, "before")] = before[rows]
        hist_values[(q, "after")] = after[rows]

    stored = training_residuals(model)
    constraints = []
    for k, (a, b) in enumerate(pairs):
        entry = {
            "group_a": a,
            "group_b": b,
            "gap_before": groups[a]["mean_before"] - groups[b]["mean_before"],
            "gap_after": groups[a]["mean_after"] - groups[b]["mean_after"],
        }
        if k < len(stored):
            entry["residual"] = stored[k]
        elif not isinstance(model, GpModel):
            # unconstrained trees: z @ f of the raw leaf means on this data
            vals = []
            for m in _members(model):
                z = z_matrix_for(m.tree, data, [(a, b)], estimator)[:, 0]
                vals.append(abs(float(z @ m.leaf_values)))
            entry["residual"] = max(vals) if vals else math.nan
        constraints.append(entry)

    edges, counts = _histograms(hist_values, hist_bins)
    diff = after - before
    return {
        "n_rows": data.n,
        "groups": groups,
        "constraints": constraints,
        "rms_perturbation": float(np.sqrt(np.mean(diff * diff))),
        "histogram": {
            "edges": edges.tolist(),
            "counts": [
                {"group": q, "phase": phase, "counts": c.tolist()} for (q, phase), c in counts.items()
            ],
        },
    }


def write_histogram_csv(report: dict, path) -> None:
    edges = report["histogram"]["edges"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "phase", "bin_lower", "bin_upper", "count", "density"])
        for entry in report["histogram"]["counts"]:
            total = sum(entry["counts"])
            for i, c in enumerate(entry["counts"]):
                width = edges[i + 1] - edges[i]
                dens = c / (total * width) if total else 0.0
                w.writerow([entry["group"], entry["phase"], repr(edges[i]), repr(edges[i + 1]), c, repr(dens)])


def write_curve_csv(path, grid, columns: dict) -> None:
    """Prediction curves over a 1-D grid, one column per model variant."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", *columns])
        for i, x in enumerate(grid):
            w.writerow([repr(float(x)), *(repr(float(v[i])) for v in columns.values())])
