"""Versioned JSON model files.

Layout::

    {"format_version": 1, "model_kind": "tree" | "forest" | "boost" | "gp",
     "meta": {...},           # data columns, fit and constraint settings
     "members": [...],        # tree/forest/boost: serialized constrained trees
     "init": ..., "learning_rates": [...],   # boost only
     "gp": {...}}             # gp only

Files are written with sorted keys and fixed indentation so that
save -> load -> save reproduces the same bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

from .constraint import ConstrainedTree
from .ensemble import FairBoost, FairForest
from .errors import ModelFormatError
from .kernelgp import GpModel

FORMAT_VERSION = 1
MODEL_KINDS = ("tree", "forest", "boost", "gp")


def model_kind(model) -> str:
    if isinstance(model, ConstrainedTree):
        return "tree"
    if isinstance(model, FairForest):
        return "forest"
    if isinstance(model, FairBoost):
        return "boost"
    if isinstance(model, GpModel):
        return "gp"
    raise TypeError(f"cannot serialize {type(model).__name__}")


def to_document(model, meta: dict | None = None) -> dict:
    kind = model_kind(model)
    doc = {"format_version": FORMAT_VERSION, "model_kind": kind, "meta": meta or {}}
    if kind == "tree":
        doc["members"] = [model.to_dict()]
    elif kind == "forest":
        doc["members"] = [m.to_dict() for m in model.members]
    elif kind == "boost":
        doc["members"] = [m.to_dict() for m in model.stages]
        doc["init"] = model.init
        doc["learning_rates"] = list(model.learning_rates)
    else:
        doc["gp"] = model.to_dict()
    return doc


def from_document(doc: dict):
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    kind = doc.get("model_kind")
    if kind not in MODEL_KINDS:
        raise ModelFormatError(f"unknown model_kind {kind!r}")
    try:
        if kind == "gp":
            return GpModel.from_dict(doc["gp"])
        members = [ConstrainedTree.from_dict(m) for m in doc["members"]]
        if kind == "tree":
            return members[0]
        if kind == "forest":
            return FairForest(members)
        return FairBoost(float(doc["init"]), members, [float(v) for v in doc["learning_rates"]])
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc


def dumps(model, meta: dict | None = None) -> str:
    return json.dumps(to_document(model, meta), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_model(model, path, meta: dict | None = None) -> None:
    Path(path).write_text(dumps(model, meta), encoding="utf-8")


def load_model(path):
    """Return ``(model, meta)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from exc
    return from_document(doc), doc.get("meta", {})
