"""Datasets, group queries, CSV ingestion, splitting and the Beta demo data."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyGroup,
    EmptySplit,
    InvalidParameter,
    MissingColumn,
    ParseError,
)

# Shapes of the two Beta populations in the synthetic demo.
DEMO_SHAPES = ((2.0, 3.0), (3.0, 2.0))
DEMO_GROUP_COLUMN = "group"
DEMO_GROUP_NAMES = ("A", "B")


def make_tag(column: str, value: str) -> str:
    return f"{column}={value}"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, optional targets and per-row group tags.

    Tags have the form ``column=value``; a row may carry several.
    """

    features: np.ndarray
    targets: np.ndarray | None
    groups: tuple[frozenset, ...]
    feature_names: tuple[str, ...] = ()
    target_name: str | None = None
    group_columns: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise EmptyDataset("dataset needs at least one row")
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain missing or non-finite values")
        object.__setattr__(self, "features", X)
        if self.targets is not None:
            y = np.asarray(self.targets, dtype=float).reshape(-1)
            if y.shape[0] != X.shape[0]:
                raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
            if not np.all(np.isfinite(y)):
                raise ValueError("targets contain missing or non-finite values")
            object.__setattr__(self, "targets", y)
        groups = tuple(frozenset(g) for g in self.groups)
        if len(groups) != X.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} rows but {len(groups)} group entries")
        object.__setattr__(self, "groups", groups)
        if not self.feature_names:
            names = tuple(f"x{i}" for i in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)
        elif len(self.feature_names) != X.shape[1]:
            raise DimensionMismatch("feature_names does not match feature count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def tags(self) -> set[str]:
        out: set[str] = set()
        for g in self.groups:
            out |= g
        return out

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            features=self.features[rows],
            targets=None if self.targets is None else self.targets[rows],
            groups=tuple(self.groups[i] for i in rows),
            feature_names=self.feature_names,
            target_name=self.target_name,
            group_columns=self.group_columns,
        )

    def with_targets(self, targets) -> "Dataset":
        return Dataset(
            features=self.features,
            targets=targets,
            groups=self.groups,
            feature_names=self.feature_names,
            target_name=self.target_name,
            group_columns=self.group_columns,
        )

    def require_targets(self) -> np.ndarray:
        if self.targets is None:
            raise InvalidParameter("dataset has no target column")
        return self.targets


@dataclass(frozen=True)
class GroupQuery:
    """Conjunction of tag requirements, written ``race=A&sex=F``.

    A term ``col!=value`` requires the row to lack the tag ``col=value``.
    """

    required: tuple[str, ...] = ()
    excluded: tuple[str, ...] = field(default=())

    @classmethod
    def parse(cls, text: str) -> "GroupQuery":
        required, excluded = [], []
        for raw in text.split("&"):
            term = raw.strip()
            if not term:
                continue
            if "!=" in term:
                col, val = term.split("!=", 1)
                excluded.append(make_tag(col.strip(), val.strip()))
            elif "=" in term:
                col, val = term.split("=", 1)
                required.append(make_tag(col.strip(), val.strip()))
            else:
                raise InvalidParameter(f"bad group query term {term!r}; use column=value")
        if not required and not excluded:
            raise InvalidParameter(f"empty group query {text!r}")
        return cls(tuple(sorted(set(required))), tuple(sorted(set(excluded))))

    def __str__(self) -> str:
        parts = list(self.required)
        parts += [t.replace("=", "!=", 1) for t in self.excluded]
        return "&".join(parts)

    def matches(self, tags: frozenset) -> bool:
        return all(t in tags for t in self.required) and not any(t in tags for t in self.excluded)

    def mask(self, dataset: Dataset) -> np.ndarray:
        return np.fromiter((self.matches(g) for g in dataset.groups), dtype=bool, count=dataset.n)

    def select(self, dataset: Dataset, *, require_nonempty: bool = True) -> np.ndarray:
        rows = np.flatnonzero(self.mask(dataset))
        if require_nonempty and rows.size == 0:
            raise EmptyGroup(f"group query {self} selects no rows")
        return rows


def as_query(q) -> GroupQuery:
    return q if isinstance(q, GroupQuery) else GroupQuery.parse(str(q))


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(row, column, text) from None
    if not math.isfinite(value):
        raise ParseError(row, column, text)
    return value


def load_csv(
    path,
    target_column: str | None,
    group_columns: Sequence[str] = (),
    feature_columns: Sequence[str] | None = None,
) -> Dataset:
    """Read a header-first, comma separated UTF-8 file.

    Feature columns default to every column that is neither the target nor
    a group column. Group columns become tags ``column=value``. Row numbers
    in :class:`ParseError` count data rows from 0.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    group_columns = tuple(group_columns)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path} is empty") from None
        index = {name: i for i, name in enumerate(header)}
        for col in ([target_column] if target_column else []) + list(group_columns):
            if col not in index:
                raise MissingColumn(f"column {col!r} not found in {path}")
        if feature_columns is None:
            skip = set(group_columns) | ({target_column} if target_column else set())
            feature_columns = [h for h in header if h not in skip]
        feature_columns = tuple(feature_columns)
        for col in feature_columns:
            if col not in index:
                raise MissingColumn(f"column {col!r} not found in {path}")

        feats, targets, groups = [], [], []
        for row_no, row in enumerate(reader):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            feats.append([_parse_float(row[index[c]].strip(), row_no, c) for c in feature_columns])
            if target_column:
                targets.append(_parse_float(row[index[target_column]].strip(), row_no, target_column))
            groups.append(frozenset(make_tag(c, row[index[c]].strip()) for c in group_columns))

    if not feats:
        raise EmptyDataset(f"{path} has no data rows")
    return Dataset(
        features=np.array(feats, dtype=float).reshape(len(feats), len(feature_columns)),
        targets=np.array(targets, dtype=float) if target_column else None,
        groups=tuple(groups),
        feature_names=feature_columns,
        target_name=target_column,
        group_columns=group_columns,
    )


def write_csv(dataset: Dataset, path, extra: dict[str, Iterable] | None = None) -> None:
    """Write features, target, group columns and any ``extra`` columns."""
    extra = {k: list(v) for k, v in (extra or {}).items()}
    header = list(dataset.feature_names)
    if dataset.targets is not None:
        header.append(dataset.target_name or "y")
    header += list(dataset.group_columns)
    header += list(extra)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.targets is not None:
                row.append(repr(float(dataset.targets[i])))
            tags = dict(t.split("=", 1) for t in dataset.groups[i])
            row += [tags.get(c, "") for c in dataset.group_columns]
            row += [v[i] if isinstance(v[i], str) else repr(float(v[i])) for v in extra.values()]
            w.writerow(row)


def target_function(x, alpha: float, beta: float):
    """``x cos(alpha x^2) + sin(beta x)``."""
    x = np.asarray(x, dtype=float)
    return x * np.cos(alpha * x**2) + np.sin(beta * x)


def synth_beta_demo(
    n_per_group: int,
    fn_params: tuple[float, float],
    shapes: tuple[tuple[float, float], tuple[float, float]] = DEMO_SHAPES,
    noise: float = 0.0,
    seed: int = 0,
) -> Dataset:
    """Two groups on [0, 1] drawn from Beta distributions, targets from
    :func:`target_function` plus optional Gaussian noise with std ``noise``."""
    if n_per_group < 1:
        raise InvalidParameter("n_per_group must be at least 1")
    if noise < 0:
        raise InvalidParameter("noise must be nonnegative")
    for a, b in shapes:
        if not (a > 0 and b > 0):
            raise InvalidParameter(f"Beta shape parameters must be positive, got ({a}, {b})")
    alpha, beta = fn_params
    rng = np.random.default_rng(seed)
    xs, groups = [], []
    for name, (a, b) in zip(DEMO_GROUP_NAMES, shapes):
        xs.append(rng.beta(a, b, size=n_per_group))
        groups += [frozenset({make_tag(DEMO_GROUP_COLUMN, name)})] * n_per_group
    x = np.concatenate(xs)
    y = target_function(x, alpha, beta)
    if noise > 0:
        y = y + noise * rng.standard_normal(x.shape[0])
    return Dataset(
        features=x[:, None],
        targets=y,
        groups=tuple(groups),
        feature_names=("x",),
        target_name="y",
        group_columns=(DEMO_GROUP_COLUMN,),
    )


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Shuffle and cut; the test side gets ``ceil(n * test_fraction)`` rows."""
    if not 0 < test_fraction < 1:
        raise InvalidParameter("test_fraction must lie in (0, 1)")
    n = dataset.n
    n_test = math.ceil(n * test_fraction)
    if n_test >= n:
        raise EmptySplit(f"test fraction {test_fraction} leaves no training rows out of {n}")
    order = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))
