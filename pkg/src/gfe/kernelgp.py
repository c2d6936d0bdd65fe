"""Kernel regression with an integral equality constraint.

The constraint ``sum_a w_a f(x_a) = 0`` over a discrete signed measure is
added to the Gaussian process as a noiseless pseudo-observation of value 0.
Its covariances are quadrature sums of the kernel: a single sum against
each data point and a double sum for its own variance. The constraint
row/column comes first in the augmented matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, as_query
from .errors import DimensionMismatch, EmptyGroup, InvalidParameter
from .linalg import Cholesky, cholesky
from .tree import RegressionTree

VARIANCE_SLACK = 1e-9


def _rows(X, d: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if d in (None, 1) else X[None, :]
    if d is not None and X.shape[1] != d:
        raise DimensionMismatch(f"expected {d} features, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class RBF:
    """``amplitude * exp(-0.5 * sum(((x - x') / lengthscale)^2))``."""

    lengthscales: object = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if np.any(ls <= 0) or self.amplitude <= 0:
            raise InvalidParameter("lengthscales and amplitude must be positive")
        object.__setattr__(self, "lengthscales", ls)

    def __call__(self, X1, X2) -> np.ndarray:
        A = _rows(X1) / self.lengthscales
        B = _rows(X2) / self.lengthscales
        sq = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
        return self.amplitude * np.exp(-0.5 * np.maximum(sq, 0.0))

    def diag(self, X) -> np.ndarray:
        return np.full(_rows(X).shape[0], float(self.amplitude))

    def to_dict(self) -> dict:
        return {"kind": "rbf", "lengthscales": self.lengthscales.tolist(), "amplitude": self.amplitude}


@dataclass(frozen=True)
class TreeKernel:
    """1 when two points share a leaf, else 0."""

    tree: RegressionTree

    def __call__(self, X1, X2) -> np.ndarray:
        return self.tree.kernel_matrix(X1, X2)

    def diag(self, X) -> np.ndarray:
        return np.ones(_rows(X, self.tree.n_features).shape[0])


@dataclass(frozen=True)
class SignedMeasure:
    """Weighted atoms representing ``p_A - p_B``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P[:, None] if w.size else P.reshape(0, 1)
        if P.shape[0] != w.size:
            raise DimensionMismatch(f"{P.shape[0]} atoms but {w.size} weights")
        object.__setattr__(self, "points", P)
        object.__setattr__(self, "weights", w)

    @property
    def total(self) -> float:
        return float(np.sum(self.weights))

    @classmethod
    def empty(cls, d: int) -> "SignedMeasure":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def from_groups(cls, data: Dataset, query_a, query_b) -> "SignedMeasure":
        """Empirical measure of group A minus that of group B on ``data``."""
        a = as_query(query_a).select(data, require_nonempty=False)
        b = as_query(query_b).select(data, require_nonempty=False)
        if a.size == 0 or b.size == 0:
            raise EmptyGroup("both groups need at least one row")
        w = np.zeros(data.n)
        np.add.at(w, a, 1.0 / a.size)
        np.add.at(w, b, -1.0 / b.size)
        keep = np.flatnonzero(w != 0.0)
        return cls(data.features[keep], w[keep])


def quadrature_row(kernel, q: SignedMeasure, X0) -> np.ndarray:
    """``sum_a w_a K(x_a, x0)`` for every row ``x0`` of ``X0``."""
    X0 = _rows(X0)
    if q.weights.size == 0:
        return np.zeros(X0.shape[0])
    if q.points.shape[1] != X0.shape[1]:
        raise DimensionMismatch("measure atoms and query points differ in dimension")
    return kernel(X0, q.points) @ q.weights


def quadrature_corner(kernel, q: SignedMeasure) -> float:
    """``sum_a sum_b w_a w_b K(x_a, x_b)``."""
    if q.weights.size == 0:
        return 0.0
    if isinstance(kernel, TreeKernel):
        # the indicator kernel collapses to per-leaf signed sums
        leaf = kernel.tree.apply(q.points)
        per_leaf = np.bincount(leaf, weights=q.weights, minlength=kernel.tree.n_leaves)
        return float(per_leaf @ per_leaf)
    return float(q.weights @ kernel(q.points, q.points) @ q.weights)


@dataclass(eq=False)
class ConstrainedKernelSystem:
    """Fitted augmented system; see :func:`fit_constrained`."""

    kernel: object
    X: np.ndarray
    y: np.ndarray
    measure: SignedMeasure | None
    noise_variance: float
    matrix: np.ndarray
    observations: np.ndarray
    chol: Cholesky
    alpha: np.ndarray = field(init=False)

    def __post_init__(self):
        self.alpha = self.chol.solve(self.observations)

    @property
    def constrained(self) -> bool:
        return self.measure is not None

    @property
    def jitter(self) -> float:
        return self.chol.jitter

    def cross_covariance(self, Xs) -> np.ndarray:
        """Rows: test points; columns: (constraint, training points)."""
        Xs = _rows(Xs, self.X.shape[1])
        K = self.kernel(Xs, self.X)
        if self.measure is None:
            return K
        return np.column_stack([quadrature_row(self.kernel, self.measure, Xs), K])

    def predict_mean(self, Xs) -> np.ndarray:
        return self.cross_covariance(Xs) @ self.alpha

    def predict_variance(self, Xs) -> np.ndarray:
        Xs = _rows(Xs, self.X.shape[1])
        Ks = self.cross_covariance(Xs)
        V = self.chol.half_solve(Ks.T)
        var = self.kernel.diag(Xs) - np.sum(V * V, axis=0)
        if np.any(var < -VARIANCE_SLACK):
            warnings.warn(f"negative posterior variance {var.min():.3e} clamped to 0", RuntimeWarning)
        return np.maximum(var, 0.0)

    def constraint_value(self) -> float:
        """``sum_a w_a mean(x_a)``; zero for a satisfied constraint."""
        if self.measure is None or self.measure.weights.size == 0:
            return 0.0
        return float(self.measure.weights @ self.predict_mean(self.measure.points))


def fit_constrained(kernel, X, y, measure: SignedMeasure | None, noise_variance: float) -> ConstrainedKernelSystem:
    """Assemble and factor the augmented covariance.

    Layout is ``[[corner, row^T], [row, K + s2 I]]`` with observations
    ``(0, y)``; the constraint carries no noise. ``measure=None`` gives
    plain kernel regression. A zero measure leaves an all-zero row, which
    the jittered factorization absorbs.
    """
    X = _rows(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch("X and y must be nonempty with matching rows")
    if noise_variance < 0:
        raise InvalidParameter("noise_variance must be nonnegative")
    K = kernel(X, X) + noise_variance * np.eye(X.shape[0])
    if measure is None:
        A, obs = K, y
    else:
        row = quadrature_row(kernel, measure, X)
        A = np.empty((X.shape[0] + 1, X.shape[0] + 1))
        A[0, 0] = quadrature_corner(kernel, measure)
        A[0, 1:] = row
        A[1:, 0] = row
        A[1:, 1:] = K
        obs = np.concatenate([[0.0], y])
    A = 0.5 * (A + A.T)
    return ConstrainedKernelSystem(
        kernel=kernel, X=X, y=y, measure=measure, noise_variance=float(noise_variance),
        matrix=A, observations=obs, chol=cholesky(A),
    )


def predict_variance(system: ConstrainedKernelSystem, x) -> float:
    return float(system.predict_variance(_rows(x, system.X.shape[1]))[0])


@dataclass(eq=False)
class BorderedSystem:
    """Zero-corner bordered solve ``[[K, b], [b^T, 0]] (alpha, lam) = (y, 0)``.

    This is the Lagrangian form of a hard linear constraint on the kernel
    weights; predictions are ``K(x*, X) @ alpha`` with no constraint term.
    Solved densely with LU since the matrix is indefinite.
    """

    kernel: object
    X: np.ndarray
    alpha: np.ndarray
    multiplier: float

    def predict_mean(self, Xs) -> np.ndarray:
        return self.kernel(_rows(Xs, self.X.shape[1]), self.X) @ self.alpha


def fit_bordered(kernel, X, y, border, noise_variance: float) -> BorderedSystem:
    X = _rows(X)
    y = np.asarray(y, dtype=float).reshape(-1)
    b = np.asarray(border, dtype=float).reshape(-1)
    n = X.shape[0]
    if y.shape[0] != n or b.shape[0] != n:
        raise DimensionMismatch("X, y and border must have matching lengths")
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = kernel(X, X) + noise_variance * np.eye(n)
    A[:n, n] = b
    A[n, :n] = b
    sol = np.linalg.solve(A, np.concatenate([y, [0.0]]))
    return BorderedSystem(kernel=kernel, X=X, alpha=sol[:n], multiplier=float(sol[n]))


@dataclass(eq=False)
class GpModel:
    """RBF regression, optionally with one group-fairness constraint."""

    kernel: RBF
    X: np.ndarray
    y: np.ndarray
    noise_variance: float
    measure: SignedMeasure | None = None
    pairs: tuple = ()
    _systems: dict = field(default_factory=dict, repr=False)

    def _system(self, constrained: bool) -> ConstrainedKernelSystem:
        key = constrained and self.measure is not None
        if key not in self._systems:
            m = self.measure if key else None
            self._systems[key] = fit_constrained(self.kernel, self.X, self.y, m, self.noise_variance)
        return self._systems[key]

    @property
    def system(self) -> ConstrainedKernelSystem:
        return self._system(True)

    def predict(self, X) -> np.ndarray:
        return self._system(True).predict_mean(X)

    def predict_unconstrained(self, X) -> np.ndarray:
        return self._system(False).predict_mean(X)

    def predict_variance(self, X) -> np.ndarray:
        return self._system(True).predict_variance(X)

    def constrain(self, data: Dataset, query_a, query_b) -> "GpModel":
        measure = SignedMeasure.from_groups(data, query_a, query_b)
        pair = (str(as_query(query_a)), str(as_query(query_b)))
        return GpModel(self.kernel, self.X, self.y, self.noise_variance, measure, (pair,))

    def to_dict(self) -> dict:
        d = {
            "kernel": self.kernel.to_dict(),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "noise_variance": self.noise_variance,
            "pairs": [list(p) for p in self.pairs],
            "measure": None,
        }
        if self.measure is not None:
            d["measure"] = {"points": self.measure.points.tolist(), "weights": self.measure.weights.tolist()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        k = d["kernel"]
        measure = None
        if d.get("measure") is not None:
            X = np.array(d["X"], dtype=float)
            pts = np.array(d["measure"]["points"], dtype=float).reshape(-1, X.shape[1])
            measure = SignedMeasure(pts, np.array(d["measure"]["weights"], dtype=float))
        return cls(
            kernel=RBF(k["lengthscales"], k["amplitude"]),
            X=np.array(d["X"], dtype=float),
            y=np.array(d["y"], dtype=float),
            noise_variance=float(d["noise_variance"]),
            measure=measure,
            pairs=tuple(tuple(p) for p in d.get("pairs", [])),
        )
