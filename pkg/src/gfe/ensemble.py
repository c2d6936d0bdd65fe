"""Averaged and boosted ensembles of constrained trees.

Every member is corrected on its own against the same group measures, so
the ensemble inherits the constraint: averages and sums of fair leaf-value
functions stay fair, and a boosting init constant shifts both group means
equally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tree as tree_mod
from .constraint import DEFAULT_NOISE, ConstrainedTree, constrain_on_groups, unconstrained
from .data import Dataset, as_query
from .errors import InvalidParameter
from .groupmass import MassEstimator


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_leaf_size: int = 1
    feature_subsample: float = 1.0

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "min_leaf_size": self.min_leaf_size,
                "feature_subsample": self.feature_subsample}


@dataclass(frozen=True)
class ConstraintConfig:
    """How members are corrected: group pairs, representation, noise, estimator."""

    pairs: tuple = ()
    representation: str = "compressed"
    noise_variance: float = DEFAULT_NOISE
    remove_prior: bool = True
    estimator: MassEstimator = field(default_factory=MassEstimator)

    def apply(self, t: tree_mod.RegressionTree, train: Dataset) -> ConstrainedTree:
        if not self.pairs:
            return unconstrained(t, self.noise_variance)
        return constrain_on_groups(
            t, train, self.pairs, self.representation, self.noise_variance,
            self.remove_prior, self.estimator,
        )


@dataclass(eq=False)
class FairForest:
    members: list

    def predict(self, X) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members], axis=0)

    def predict_unconstrained(self, X) -> np.ndarray:
        return np.mean([m.predict_unconstrained(X) for m in self.members], axis=0)


@dataclass(eq=False)
class FairBoost:
    init: float
    stages: list
    learning_rates: list

    def predict(self, X) -> np.ndarray:
        out = np.full(np.atleast_2d(X).shape[0], self.init)
        for st, lr in zip(self.stages, self.learning_rates):
            out += lr * st.predict(X)
        return out

    def predict_unconstrained(self, X) -> np.ndarray:
        out = np.full(np.atleast_2d(X).shape[0], self.init)
        for st, lr in zip(self.stages, self.learning_rates):
            out += lr * st.predict_unconstrained(X)
        return out

    def staged_predict(self, X):
        out = np.full(np.atleast_2d(X).shape[0], self.init)
        for st, lr in zip(self.stages, self.learning_rates):
            out = out + lr * st.predict(X)
            yield out

    @property
    def members(self) -> list:
        return self.stages


def _fit_member(train: Dataset, params: TreeParams, bootstrap: bool, seed: int) -> tree_mod.RegressionTree:
    X, y = train.features, train.require_targets()
    if bootstrap:
        rows = np.random.default_rng(seed).integers(0, train.n, size=train.n)
        X, y = X[rows], y[rows]
    return tree_mod.grow(X, y, params.max_depth, params.min_leaf_size, seed, params.feature_subsample)


def fit_fair_forest(
    train: Dataset,
    n_trees: int,
    params: TreeParams = TreeParams(),
    bootstrap: bool = True,
    config: ConstraintConfig = ConstraintConfig(),
    seed: int = 0,
) -> FairForest:
    """Tree ``i`` uses seed ``seed + i`` for its resample and feature draws.

    Leaf masses always come from the full ``train`` set, never the resample.
    """
    if n_trees < 1:
        raise InvalidParameter("n_trees must be at least 1")
    members = [config.apply(_fit_member(train, params, bootstrap, seed + i), train) for i in range(n_trees)]
    return FairForest(members)


def constrain_members(model, train: Dataset, config: ConstraintConfig):
    """Re-correct every member of an existing forest or boost."""
    fixed = [config.apply(m.tree, train) for m in model.members]
    if isinstance(model, FairBoost):
        return FairBoost(model.init, fixed, list(model.learning_rates))
    return FairForest(fixed)


def fit_fair_boost(
    train: Dataset,
    n_stages: int,
    learning_rate: float = 0.1,
    params: TreeParams = TreeParams(),
    config: ConstraintConfig = ConstraintConfig(),
    seed: int = 0,
) -> FairBoost:
    """Squared-error gradient boosting with each stage corrected before use.

    Stage ``t`` is grown on the residuals of the corrected partial sum and
    uses seed ``seed + t``.
    """
    if n_stages < 1:
        raise InvalidParameter("n_stages must be at least 1")
    if not 0 < learning_rate <= 1:
        raise InvalidParameter("learning_rate must lie in (0, 1]")
    y = train.require_targets()
    init = float(np.mean(y))
    current = np.full(train.n, init)
    stages = []
    for t in range(n_stages):
        raw = tree_mod.grow(train.features, y - current, params.max_depth, params.min_leaf_size,
                            seed + t, params.feature_subsample)
        stage = config.apply(raw, train)
        current = current + learning_rate * stage.predict(train.features)
        stages.append(stage)
    return FairBoost(init, stages, [learning_rate] * n_stages)


def group_mean_gap(predictions, data: Dataset, query_a, query_b) -> float:
    p = np.asarray(predictions, dtype=float)
    a = as_query(query_a).select(data)
    b = as_query(query_b).select(data)
    return float(p[a].mean() - p[b].mean())


def member_pairs(model) -> Sequence[tuple]:
    members = getattr(model, "members", None) or []
    return members[0].pairs if members else ()
