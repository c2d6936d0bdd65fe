"""Per-leaf probability mass of a group's input distribution.

Two estimators: the empirical share of the group's training rows in each
leaf, and a diagonal Gaussian mixture integrated over each leaf's box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from .data import Dataset, GroupQuery, as_query
from .errors import DegenerateData, EmptyGroup, InvalidParameter
from .tree import RegressionTree

VARIANCE_FLOOR_REL = 1e-6
VARIANCE_FLOOR_ABS = 1e-12


def empirical_masses(tree: RegressionTree, train: Dataset, query) -> np.ndarray:
    """Fraction of the rows selected by ``query`` that land in each leaf."""
    query = as_query(query)
    rows = query.select(train, require_nonempty=False)
    if rows.size == 0:
        raise EmptyGroup(f"group {query} has no training rows")
    counts = np.bincount(tree.apply(train.features[rows]), minlength=tree.n_leaves)
    return counts / rows.size


@dataclass(frozen=True)
class DiagonalGmm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float = float("nan")
    n_iter: int = 0

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    def log_density(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return logsumexp(self._component_logpdf(X), axis=1)

    def _component_logpdf(self, X) -> np.ndarray:
        diff = X[:, None, :] - self.means[None, :, :]
        quad = np.sum(diff**2 / self.variances[None], axis=2)
        log_det = np.sum(np.log(2 * np.pi * self.variances), axis=1)
        return np.log(self.weights)[None, :] - 0.5 * (quad + log_det[None, :])

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_likelihood": self.log_likelihood,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagonalGmm":
        return cls(
            weights=np.array(d["weights"], dtype=float),
            means=np.array(d["means"], dtype=float),
            variances=np.array(d["variances"], dtype=float),
            log_likelihood=float(d.get("log_likelihood", float("nan"))),
            n_iter=int(d.get("n_iter", 0)),
        )


def _farthest_point_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    distinct = np.unique(X, axis=0)
    if distinct.shape[0] < k:
        raise DegenerateData(f"{distinct.shape[0]} distinct rows, need at least {k}")
    scale = distinct.std(axis=0)
    scale[scale == 0] = 1.0
    Z = distinct / scale
    chosen = [int(rng.integers(distinct.shape[0]))]
    nearest = np.sum((Z - Z[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(nearest))
        chosen.append(nxt)
        nearest = np.minimum(nearest, np.sum((Z - Z[nxt]) ** 2, axis=1))
    return distinct[chosen].copy()


def fit_gmm(rows, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-8) -> DiagonalGmm:
    """EM for a mixture of axis-aligned Gaussians.

    Stops once the mean per-row log-likelihood improves by less than
    ``tol``. Variances are floored at ``1e-6`` times the data variance of
    each dimension.
    """
    X = np.asarray(rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1:
        raise InvalidParameter("k must be at least 1")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    means = _farthest_point_init(X, k, rng)
    data_var = X.var(axis=0)
    floor = np.maximum(VARIANCE_FLOOR_REL * data_var, VARIANCE_FLOOR_ABS)
    variances = np.tile(np.maximum(data_var, floor), (k, 1))
    weights = np.full(k, 1.0 / k)
    gmm = DiagonalGmm(weights, means, variances)

    prev = -np.inf
    ll = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logp = gmm._component_logpdf(X)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        means = (resp.T @ X) / nk[:, None]
        sq = (X[:, None, :] - means[None, :, :]) ** 2
        variances = np.einsum("nk,nkd->kd", resp, sq) / nk[:, None]
        variances = np.maximum(variances, floor[None, :])
        weights = nk / nk.sum()
        gmm = DiagonalGmm(weights, means, variances)
        if ll - prev < tol:
            break
        prev = ll
    ll = float(gmm.log_density(X).mean())
    return DiagonalGmm(gmm.weights, gmm.means, gmm.variances, log_likelihood=ll, n_iter=it)


def _normal_interval(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``Phi(b) - Phi(a)`` evaluated on the tail that avoids cancellation."""
    upper_tail = a > 0
    return np.where(upper_tail, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def gmm_leaf_masses(gmm: DiagonalGmm, tree: RegressionTree) -> np.ndarray:
    sd = np.sqrt(gmm.variances)
    out = np.zeros(tree.n_leaves)
    with np.errstate(invalid="ignore"):
        for w, mu, s in zip(gmm.weights, gmm.means, sd):
            lo = (tree.box_lower - mu) / s
            hi = (tree.box_upper - mu) / s
            out += w * np.prod(_normal_interval(lo, hi), axis=1)
    return out


@dataclass
class MassEstimator:
    """Per-run choice of leaf-mass estimator.

    GMMs are fitted once per group query and reused across trees.
    """

    kind: str = "empirical"
    gmm_k: int = 2
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-8
    _gmms: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.kind not in ("empirical", "gmm"):
            raise InvalidParameter(f"unknown estimator {self.kind!r}")

    def gmm_for(self, train: Dataset, query: GroupQuery) -> DiagonalGmm:
        key = str(query)
        if key not in self._gmms:
            rows = query.select(train, require_nonempty=False)
            if rows.size == 0:
                raise EmptyGroup(f"group {query} has no training rows")
            self._gmms[key] = fit_gmm(train.features[rows], self.gmm_k, self.seed, self.max_iter, self.tol)
        return self._gmms[key]

    def masses(self, tree: RegressionTree, train: Dataset, query) -> np.ndarray:
        query = as_query(query)
        if self.kind == "empirical":
            return empirical_masses(tree, train, query)
        return gmm_leaf_masses(self.gmm_for(train, query), tree)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "gmm":
            d.update(k=self.gmm_k, seed=self.seed, max_iter=self.max_iter, tol=self.tol)
            d["gmms"] = {q: g.to_dict() for q, g in sorted(self._gmms.items())}
        return d


@dataclass(frozen=True)
class GroupMassProfile:
    masses: dict
    estimator: dict

    def __getitem__(self, query) -> np.ndarray:
        return self.masses[str(as_query(query))]


def mass_profile(tree: RegressionTree, train: Dataset, queries, estimator: MassEstimator | None = None) -> GroupMassProfile:
    estimator = estimator or MassEstimator()
    masses = {}
    for q in queries:
        q = as_query(q)
        masses[str(q)] = estimator.masses(tree, train, q)
    return GroupMassProfile(masses=masses, estimator=estimator.describe())
