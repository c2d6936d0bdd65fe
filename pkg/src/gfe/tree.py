"""CART regression trees and their view as an indicator kernel.

Splits are chosen greedily by weighted variance reduction over midpoints
of consecutive distinct feature values. Routing sends ``x[f] <= t`` left.
Leaves are numbered depth first, left before right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DimensionMismatch, EmptyDataset, InvalidParameter

_REL_GAIN_TOL = 1e-12


@dataclass(frozen=True)
class LeafStat:
    mean_target: float
    count: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat array representation of a fitted tree.

    Internal nodes have ``feature >= 0``; leaves have ``feature == -1`` and a
    ``leaf_index``. ``box_lower``/``box_upper`` hold each leaf's region,
    with ``-inf``/``inf`` for unbounded sides; a leaf covers
    ``lower < x <= upper`` per feature.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_index: np.ndarray
    leaf_mean: np.ndarray
    leaf_count: np.ndarray
    box_lower: np.ndarray
    box_upper: np.ndarray
    max_depth: int | None = None
    min_leaf_size: int = 1

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_mean.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.box_lower.shape[1])

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def leaves(self) -> list[LeafStat]:
        return [
            LeafStat(
                mean_target=float(self.leaf_mean[j]),
                count=int(self.leaf_count[j]),
                lower=tuple(float(v) for v in self.box_lower[j]),
                upper=tuple(float(v) for v in self.box_upper[j]),
            )
            for j in range(self.n_leaves)
        ]

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected rows with {self.n_features} features, got shape {X.shape}"
            )
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf index of every row of ``X``."""
        X = self._check(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return self.leaf_index[node]

    def leaf_of(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise DimensionMismatch("leaf_of takes a single feature vector")
        return int(self.apply(x[None, :])[0])

    def predict(self, X) -> np.ndarray:
        return self.leaf_mean[self.apply(X)]

    def kernel_matrix(self, X1, X2=None) -> np.ndarray:
        """Indicator kernel: 1 where two rows share a leaf."""
        a = self.apply(X1)
        b = a if X2 is None else self.apply(X2)
        return (a[:, None] == b[None, :]).astype(float)

    def to_dict(self) -> dict:
        def finite_or_str(v):
            return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf_index": self.leaf_index.tolist(),
            "leaf_mean": self.leaf_mean.tolist(),
            "leaf_count": self.leaf_count.tolist(),
            "box_lower": [[finite_or_str(v) for v in row] for row in self.box_lower.tolist()],
            "box_upper": [[finite_or_str(v) for v in row] for row in self.box_upper.tolist()],
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf_size": self.min_leaf_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        n_features = int(d["n_features"])

        def box(rows):
            arr = np.array([[float(v) for v in row] for row in rows], dtype=float)
            return arr.reshape(len(rows), n_features)

        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            leaf_index=np.array(d["leaf_index"], dtype=np.int64),
            leaf_mean=np.array(d["leaf_mean"], dtype=float),
            leaf_count=np.array(d["leaf_count"], dtype=np.int64),
            box_lower=box(d["box_lower"]),
            box_upper=box(d["box_upper"]),
            max_depth=d.get("max_depth"),
            min_leaf_size=int(d.get("min_leaf_size", 1)),
        )

    def with_leaf_stats(self, X, y) -> "RegressionTree":
        """Same partition, leaf means and counts recomputed from ``(X, y)``.

        Leaves that receive no rows keep their previous mean and get count 0.
        """
        leaf = self.apply(X)
        y = np.asarray(y, dtype=float)
        counts = np.bincount(leaf, minlength=self.n_leaves)
        sums = np.bincount(leaf, weights=y, minlength=self.n_leaves)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), self.leaf_mean)
        return RegressionTree(
            self.feature, self.threshold, self.left, self.right, self.leaf_index,
            means, counts.astype(np.int64), self.box_lower, self.box_upper,
            self.max_depth, self.min_leaf_size,
        )


def tree_kernel(tree: RegressionTree, x_i, x_j) -> int:
    return int(tree.leaf_of(x_i) == tree.leaf_of(x_j))


def _best_split(X, y, idx, features, min_leaf):
    """Return ``(gain, feature, threshold, left_mask)`` or ``None``."""
    ys_node = y[idx]
    n = idx.size
    centre = math.fsum(ys_node) / n
    yc_node = ys_node - centre
    sse_total = float(np.dot(yc_node, yc_node))
    if sse_total <= 0.0:
        return None
    best = None
    k = np.arange(1, n)  # left side sizes
    for f in features:
        xs = X[idx, f]
        order = np.lexsort((yc_node, xs))
        xs_s = xs[order]
        yc = yc_node[order]
        c1 = np.cumsum(yc)[:-1]
        c2 = np.cumsum(yc * yc)[:-1]
        s1, s2 = c1[-1] + yc[-1], c2[-1] + yc[-1] ** 2
        sse_left = c2 - c1 * c1 / k
        sse_right = (s2 - c2) - (s1 - c1) ** 2 / (n - k)
        gain = sse_total - sse_left - sse_right
        valid = (xs_s[:-1] < xs_s[1:]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        gain = np.where(valid, gain, -np.inf)
        pos = int(np.argmax(gain))
        g = float(gain[pos])
        if best is None or g > best[0]:
            thr = 0.5 * (xs_s[pos] + xs_s[pos + 1])
            # midpoint can round onto the upper value for adjacent floats
            if not thr < xs_s[pos + 1]:
                thr = float(xs_s[pos])
            best = (g, int(f), float(thr))
    if best is None or best[0] <= _REL_GAIN_TOL * sse_total:
        return None
    g, f, thr = best
    return g, f, thr, X[idx, f] <= thr


def grow(
    X,
    y,
    max_depth: int | None = None,
    min_leaf_size: int = 1,
    seed: int = 0,
    feature_subsample: float = 1.0,
) -> RegressionTree:
    """Fit a tree on arrays. See :func:`fit` for the rules."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot fit a tree on zero rows")
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y row counts differ")
    if max_depth is not None and max_depth < 0:
        raise InvalidParameter("max_depth must be >= 0")
    if min_leaf_size < 1:
        raise InvalidParameter("min_leaf_size must be >= 1")
    if not 0 < feature_subsample <= 1:
        raise InvalidParameter("feature_subsample must lie in (0, 1]")

    d = X.shape[1]
    n_try = max(1, int(round(feature_subsample * d)))
    rng = np.random.default_rng(seed) if n_try < d else None

    feature, threshold, left, right, leaf_index = [], [], [], [], []
    leaf_mean, leaf_count, lower, upper = [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_index.append(-1)
        return len(feature) - 1

    root = new_node()
    # stack entries: node id, row indices, depth, box bounds; right pushed first
    stack = [(root, np.arange(X.shape[0]), 0, np.full(d, -np.inf), np.full(d, np.inf))]
    while stack:
        node, idx, depth, lo, hi = stack.pop()
        split = None
        can_split = (max_depth is None or depth < max_depth) and idx.size >= 2 * min_leaf_size
        if can_split:
            feats = np.arange(d) if rng is None else np.sort(rng.choice(d, n_try, replace=False))
            split = _best_split(X, y, idx, feats, min_leaf_size)
        if split is None:
            leaf_index[node] = len(leaf_mean)
            leaf_mean.append(math.fsum(y[idx]) / idx.size)
            leaf_count.append(idx.size)
            lower.append(lo)
            upper.append(hi)
            continue
        _, f, thr, go_left = split
        l_id, r_id = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, l_id, r_id
        lo_r, hi_l = lo.copy(), hi.copy()
        hi_l[f] = thr
        lo_r[f] = thr
        stack.append((r_id, idx[~go_left], depth + 1, lo_r, hi))
        stack.append((l_id, idx[go_left], depth + 1, lo, hi_l))

    return RegressionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        leaf_index=np.array(leaf_index, dtype=np.int64),
        leaf_mean=np.array(leaf_mean, dtype=float),
        leaf_count=np.array(leaf_count, dtype=np.int64),
        box_lower=np.array(lower, dtype=float).reshape(len(lower), d),
        box_upper=np.array(upper, dtype=float).reshape(len(upper), d),
        max_depth=max_depth,
        min_leaf_size=min_leaf_size,
    )


def fit(
    train: Dataset,
    max_depth: int | None = None,
    min_leaf_size: int = 1,
    seed: int = 0,
    feature_subsample: float = 1.0,
) -> RegressionTree:
    """Fit a regression tree on ``train``.

    A node becomes a leaf when the depth cap is hit, when it holds fewer
    than ``2 * min_leaf_size`` rows, or when no split reduces the squared
    error. Equal gains resolve to the lowest feature index, then the lowest
    threshold. With ``feature_subsample < 1`` each node considers a seeded
    random subset of features; at 1.0 the seed is unused.
    """
    return grow(
        train.features,
        train.require_targets(),
        max_depth=max_depth,
        min_leaf_size=min_leaf_size,
        seed=seed,
        feature_subsample=feature_subsample,
    )
