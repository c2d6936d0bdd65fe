"""Fairness-in-expectation corrections for fitted regression trees.

For groups A and B with per-leaf masses ``a`` and ``b``, the imbalance
vector is ``z = a - b`` and a leaf-value vector ``f`` is fair when
``z @ f == 0``: the expected prediction is then the same under both group
distributions.

Three corrections are provided, all linear in the leaf means and O(L):

* compressed: one pseudo-observation per leaf. The bordered diagonal
  system inverts in closed form and the fix is an additive term
  ``-z_j * (z @ y) / (z @ z)`` per leaf (the orthogonal projection of the
  leaf means onto the constraint's null space).
* explicit: one observation per training row, block diagonal kernel plus
  the constraint border; reduces to per-leaf shrinkage ``m/(m+s2)`` and a
  rank-one term.
* intersectional: several constraints at once, projecting onto the null
  space of all independent constraint columns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg.blas import daxpy

from .data import Dataset, as_query
from .errors import DegenerateNoise, DimensionMismatch, InvalidParameter
from .groupmass import MassEstimator
from .linalg import DEFAULT_RANK_TOL, rank_revealing_basis
from .tree import RegressionTree

log = logging.getLogger(__name__)

ZERO_Z_TOL = 1e-14
MASS_SUM_TOL = 1e-9
DEFAULT_NOISE = 1.0
REPRESENTATIONS = ("compressed", "explicit")


@dataclass(frozen=True)
class ZVector:
    values: np.ndarray
    query_a: str | None = None
    query_b: str | None = None

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def norm1(self) -> float:
        return float(np.abs(self.values).sum())

    @property
    def norm2(self) -> float:
        return float(np.linalg.norm(self.values))

    @property
    def norm_ratio(self) -> float:
        """``|z|_1 / (sqrt(L) |z|_2)``, in (0, 1] for nonzero z."""
        n2 = self.norm2
        return self.norm1 / (math.sqrt(len(self)) * n2) if n2 > 0 else float("nan")


def build_z(masses_a, masses_b, query_a=None, query_b=None) -> ZVector:
    a = np.asarray(masses_a, dtype=float)
    b = np.asarray(masses_b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"mass vectors have shapes {a.shape} and {b.shape}")
    for name, m in (("A", a), ("B", b)):
        if abs(math.fsum(m) - 1.0) > MASS_SUM_TOL:
            raise InvalidParameter(f"masses of group {name} sum to {math.fsum(m)!r}, not 1")
    return ZVector(
        values=a - b,
        query_a=None if query_a is None else str(query_a),
        query_b=None if query_b is None else str(query_b),
    )


def _z_array(z, n_leaves: int) -> np.ndarray:
    values = z.values if isinstance(z, ZVector) else np.asarray(z, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape != (n_leaves,):
        raise DimensionMismatch(f"z has shape {values.shape}, tree has {n_leaves} leaves")
    return values


def _z_matrix(Z, n_leaves: int) -> np.ndarray:
    if isinstance(Z, np.ndarray) and Z.ndim == 2:
        M = Z.astype(float)
    elif isinstance(Z, np.ndarray) and Z.ndim == 1:
        M = Z.astype(float)[:, None]
    else:
        cols = [c.values if isinstance(c, ZVector) else np.asarray(c, dtype=float) for c in Z]
        M = np.column_stack(cols) if cols else np.zeros((n_leaves, 0))
    if M.shape[0] != n_leaves:
        raise DimensionMismatch(f"Z has {M.shape[0]} rows, tree has {n_leaves} leaves")
    return M


@dataclass(frozen=True, eq=False)
class ConstrainedTree:
    """A tree with corrected leaf values.

    ``leaf_values = base_values + correction``; ``base_values`` carries the
    noise shrinkage (if any) and ``correction`` the constraint term alone,
    so an inactive constraint leaves ``correction`` at zero.
    """

    tree: RegressionTree
    z: np.ndarray
    noise_variance: float
    representation: str
    base_values: np.ndarray
    correction: np.ndarray
    pairs: tuple = ()
    remove_prior: bool = True
    rho: float | None = None
    x3: float | None = None
    constraint_active: bool = False
    dropped: tuple = ()
    leaf_values: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "leaf_values", self.base_values + self.correction)

    @property
    def n_leaves(self) -> int:
        return self.tree.n_leaves

    @property
    def n_constraints(self) -> int:
        return int(self.z.shape[1])

    def predict(self, X) -> np.ndarray:
        return self.leaf_values[self.tree.apply(X)]

    def predict_unconstrained(self, X) -> np.ndarray:
        return self.tree.predict(X)

    def residuals(self) -> np.ndarray:
        """``z_k @ leaf_values`` per constraint column."""
        return self.z.T @ self.leaf_values

    def to_dict(self) -> dict:
        return {
            "tree": self.tree.to_dict(),
            "z": self.z.T.tolist(),
            "pairs": [list(p) for p in self.pairs],
            "noise_variance": self.noise_variance,
            "representation": self.representation,
            "remove_prior": self.remove_prior,
            "base_values": self.base_values.tolist(),
            "correction": self.correction.tolist(),
            "diagnostics": {
                "constraint_active": self.constraint_active,
                "dropped_constraints": list(self.dropped),
                "rho": self.rho,
                "x3": self.x3,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConstrainedTree":
        tree = RegressionTree.from_dict(d["tree"])
        cols = d["z"]
        z = np.array(cols, dtype=float).T if cols else np.zeros((tree.n_leaves, 0))
        diag = d.get("diagnostics", {})
        return cls(
            tree=tree,
            z=z.reshape(tree.n_leaves, len(cols)),
            noise_variance=float(d["noise_variance"]),
            representation=d["representation"],
            base_values=np.array(d["base_values"], dtype=float),
            correction=np.array(d["correction"], dtype=float),
            pairs=tuple(tuple(p) for p in d.get("pairs", [])),
            remove_prior=bool(d.get("remove_prior", True)),
            rho=diag.get("rho"),
            x3=diag.get("x3"),
            constraint_active=bool(diag.get("constraint_active", False)),
            dropped=tuple(diag.get("dropped_constraints", [])),
        )


def unconstrained(tree: RegressionTree, noise_variance: float = DEFAULT_NOISE) -> ConstrainedTree:
    """Wrap a bare tree so it can sit in the same containers."""
    return ConstrainedTree(
        tree=tree,
        z=np.zeros((tree.n_leaves, 0)),
        noise_variance=noise_variance,
        representation="compressed",
        base_values=tree.leaf_mean.copy(),
        correction=np.zeros(tree.n_leaves),
    )


def _check_noise(noise_variance: float) -> float:
    noise_variance = float(noise_variance)
    if not noise_variance >= 0:
        raise InvalidParameter("noise_variance must be nonnegative")
    return noise_variance


def constrain_compressed(
    tree: RegressionTree,
    z,
    noise_variance: float = DEFAULT_NOISE,
    remove_prior: bool = True,
    pairs: tuple = (),
) -> ConstrainedTree:
    """Correct leaf means through the bordered diagonal (arrowhead) system.

    With ``D = (1 + s2) I`` the inverse of ``[[D, z], [z^T, 0]]`` is
    ``diag(D^-1, 0) + rho u u^T`` with ``rho = -1 / (z^T D^-1 z)`` and
    ``u = (D^-1 z, -1)``; reading off leaf ``j`` gives
    ``(y_j - z_j (z @ y) / (z @ z)) / (1 + s2)``. ``remove_prior`` drops
    the ``1 / (1 + s2)`` factor so untouched leaves keep their means.
    """
    s2 = _check_noise(noise_variance)
    y = tree.leaf_mean
    zv = _z_array(z, tree.n_leaves)
    prior = 1.0 if remove_prior else 1.0 / (1.0 + s2)
    if prior == 1.0:
        # share the leaf means instead of copying them
        base = y.view()
        base.flags.writeable = False
    else:
        base = prior * y
    zz = float(zv @ zv)
    common = dict(
        tree=tree, z=zv[:, None], noise_variance=s2, representation="compressed",
        base_values=base, pairs=tuple(pairs), remove_prior=remove_prior,
    )
    if zz < ZERO_Z_TOL:
        log.info("imbalance vector is numerically zero; constraint inactive")
        return ConstrainedTree(correction=np.zeros_like(y), **common)

    d_inv = 1.0 / (1.0 + s2)
    rho = -1.0 / (d_inv * zz)
    zy = float(zv @ y)
    # leaf j of (D^-1 + rho u u^T) (y; 0) is d_inv y_j + rho d_inv^2 z_j (z @ y);
    # scaling by prior (1 + s2) leaves the constraint term -prior z_j (z @ y) / (z @ z)
    correction = zv * (-prior * zy / zz)
    # one refinement sweep removes the rounding left in z @ f; daxpy
    # updates in place, so large trees need no temporary
    zb = zy if prior == 1.0 else float(zv @ base)
    correction = daxpy(zv, correction, a=-(zb + float(zv @ correction)) / zz)
    return ConstrainedTree(correction=correction, rho=rho, x3=d_inv * zy,
                           constraint_active=True, **common)


def constrain_explicit(
    tree: RegressionTree,
    z,
    noise_variance: float = DEFAULT_NOISE,
    pairs: tuple = (),
) -> ConstrainedTree:
    """Correct leaf values for the one-observation-per-row representation.

    With ``w_j = m_j / (m_j + s2)``: ``X1 = w y``, ``X2 = w z``,
    ``X3 = sum(w z y)``, ``rho = -1 / sum(w z^2)`` and the leaf value is
    ``X1 + rho X2 X3``. Noise-free fitting is only possible with
    singleton leaves.
    """
    s2 = _check_noise(noise_variance)
    m = tree.leaf_count
    if m.min() < 1:
        raise InvalidParameter("explicit representation needs at least one observation per leaf")
    if s2 == 0.0 and m.max() > 1:
        raise DegenerateNoise("noise_variance = 0 with multi-row leaves makes the block system singular")
    y = tree.leaf_mean
    zv = _z_array(z, tree.n_leaves)
    w = m / (m + s2)
    x1 = w * y
    common = dict(
        tree=tree, z=zv[:, None], noise_variance=s2, representation="explicit",
        base_values=x1, pairs=tuple(pairs), remove_prior=False,
    )
    if float(zv @ zv) < ZERO_Z_TOL:
        log.info("imbalance vector is numerically zero; constraint inactive")
        return ConstrainedTree(correction=np.zeros_like(y), **common)

    x2 = w * zv
    x3 = float(x2 @ y)
    s = float(x2 @ zv)
    rho = -1.0 / s
    correction = x2 * (rho * x3)
    correction = daxpy(x2, correction, a=-(float(zv @ x1) + float(zv @ correction)) / s)
    return ConstrainedTree(correction=correction, rho=rho, x3=x3, constraint_active=True, **common)


def constrain_intersectional(
    tree: RegressionTree,
    Z,
    noise_variance: float = DEFAULT_NOISE,
    remove_prior: bool = True,
    pairs: tuple = (),
    rank_tol: float = DEFAULT_RANK_TOL,
) -> ConstrainedTree:
    """Enforce several constraints at once.

    Linearly dependent columns are dropped first (they are implied by the
    rest); the leaf means are then projected onto the null space of the
    remaining columns.
    """
    s2 = _check_noise(noise_variance)
    y = tree.leaf_mean
    M = _z_matrix(Z, tree.n_leaves)
    prior = 1.0 if remove_prior else 1.0 / (1.0 + s2)
    if prior == 1.0:
        # share the leaf means instead of copying them
        base = y.view()
        base.flags.writeable = False
    else:
        base = prior * y
    live = [k for k in range(M.shape[1]) if float(M[:, k] @ M[:, k]) >= ZERO_Z_TOL]
    basis = rank_revealing_basis(M[:, live], tol=rank_tol) if live else None
    kept = sorted(live[i] for i in basis.indices) if basis is not None else []
    dropped = tuple(k for k in range(M.shape[1]) if k not in kept)
    common = dict(
        tree=tree, z=M, noise_variance=s2, representation="compressed",
        base_values=base, pairs=tuple(pairs), remove_prior=remove_prior, dropped=dropped,
    )
    if not kept:
        log.info("all constraint columns are numerically zero; constraint inactive")
        return ConstrainedTree(correction=np.zeros_like(y), **common)

    Q, _ = np.linalg.qr(M[:, kept])
    correction = -Q @ (Q.T @ base)
    correction -= Q @ (Q.T @ (base + correction))
    return ConstrainedTree(correction=correction, constraint_active=True, **common)


def constrain(
    tree: RegressionTree,
    Z,
    representation: str = "compressed",
    noise_variance: float = DEFAULT_NOISE,
    remove_prior: bool = True,
    pairs: tuple = (),
) -> ConstrainedTree:
    """Dispatch on the number of constraint columns and representation."""
    if representation not in REPRESENTATIONS:
        raise InvalidParameter(f"unknown representation {representation!r}")
    M = _z_matrix(Z, tree.n_leaves)
    k = M.shape[1]
    if k == 0:
        return unconstrained(tree, noise_variance)
    if k == 1:
        if representation == "explicit":
            return constrain_explicit(tree, M[:, 0], noise_variance, pairs=pairs)
        return constrain_compressed(tree, M[:, 0], noise_variance, remove_prior, pairs=pairs)
    if representation == "explicit":
        raise InvalidParameter("multiple constraints are only supported in the compressed representation")
    return constrain_intersectional(tree, M, noise_variance, remove_prior, pairs=pairs)


def z_matrix_for(
    tree: RegressionTree,
    train: Dataset,
    pairs: Sequence[tuple],
    estimator: MassEstimator | None = None,
) -> np.ndarray:
    """Stack ``z`` columns for each ``(query_a, query_b)`` pair."""
    estimator = estimator or MassEstimator()
    cols = []
    for qa, qb in pairs:
        qa, qb = as_query(qa), as_query(qb)
        z = build_z(estimator.masses(tree, train, qa), estimator.masses(tree, train, qb), qa, qb)
        cols.append(z.values)
    return np.column_stack(cols) if cols else np.zeros((tree.n_leaves, 0))


def constrain_on_groups(
    tree: RegressionTree,
    train: Dataset,
    pairs: Sequence[tuple],
    representation: str = "compressed",
    noise_variance: float = DEFAULT_NOISE,
    remove_prior: bool = True,
    estimator: MassEstimator | None = None,
) -> ConstrainedTree:
    """Compute leaf masses on ``train`` and constrain ``tree`` for every pair."""
    pairs = tuple((str(as_query(a)), str(as_query(b))) for a, b in pairs)
    Z = z_matrix_for(tree, train, pairs, estimator)
    return constrain(tree, Z, representation, noise_variance, remove_prior, pairs=pairs)


def rescale_unit_interval(values) -> np.ndarray:
    """Affine map of ``values`` onto [0, 1]; a constant input maps to 0.5."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidParameter("cannot rescale an empty vector")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)
