"""Small dense linear algebra helpers.

Only what the constrained regressors need: a jittered Cholesky solve for
symmetric positive (semi-)definite systems and a greedy rank-revealing
column selection for stacks of constraint vectors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatch, NotPositiveDefinite

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
SYMMETRY_TOL = 1e-12
DEFAULT_RANK_TOL = 1e-10


def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


@dataclass(frozen=True)
class Cholesky:
    """Lower Cholesky factor of ``A + jitter * I``."""

    factor: np.ndarray
    jitter: float

    @property
    def size(self) -> int:
        return self.factor.shape[0]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.size:
            raise DimensionMismatch(
                f"right-hand side has {b.shape[0]} rows, system has {self.size}"
            )
        return sla.cho_solve((self.factor, True), b, check_finite=False)

    def half_solve(self, b) -> np.ndarray:
        """Return ``L^{-1} b``; used for quadratic forms ``b^T A^{-1} b``."""
        b = np.asarray(b, dtype=float)
        return sla.solve_triangular(self.factor, b, lower=True, check_finite=False)


def cholesky(A) -> Cholesky:
    """Factor a symmetric matrix, escalating diagonal jitter on failure.

    The plain factorization is tried first; afterwards jitter starts at
    ``1e-10`` and grows tenfold up to ``1e-4``.
    """
    A = _as_matrix(A)
    n, m = A.shape
    if n != m:
        raise DimensionMismatch(f"matrix is not square: {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")

    jitter = 0.0
    eye = np.eye(n)
    while True:
        try:
            factor = np.linalg.cholesky(A + jitter * eye if jitter else A)
            if jitter:
                log.debug("cholesky succeeded with jitter %.1e", jitter)
            return Cholesky(factor=factor, jitter=jitter)
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            # allow for float drift in the repeated multiplication
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise NotPositiveDefinite(
                    f"matrix not positive definite with jitter up to {JITTER_MAX:g}",
                    jitter=JITTER_MAX,
                ) from None


def cholesky_solve(A, b) -> np.ndarray:
    A = _as_matrix(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"A is {A.shape}, b has {b.shape[0]} rows")
    return cholesky(A).solve(b)


@dataclass(frozen=True)
class RankBasis:
    """Result of :func:`rank_revealing_basis`.

    ``coefficients`` has shape ``(len(indices), n_columns)`` and satisfies
    ``Z ~= Z[:, indices] @ coefficients``.
    """

    indices: tuple[int, ...]
    coefficients: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.indices)

    def dropped(self, n_columns: int) -> tuple[int, ...]:
        keep = set(self.indices)
        return tuple(i for i in range(n_columns) if i not in keep)


def rank_revealing_basis(Z, tol: float = DEFAULT_RANK_TOL) -> RankBasis:
    """Greedily pick a maximal linearly independent set of columns of ``Z``.

    Pivoting is on the residual norm relative to each column's own norm,
    which makes the selection invariant to column scaling; ties go to the
    lowest column index. Columns with norm at most ``tol`` times the
    largest column norm are treated as zero.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    Z = _as_matrix(Z)
    n_rows, n_cols = Z.shape
    empty = RankBasis(indices=(), coefficients=np.zeros((0, n_cols)))
    if n_cols == 0 or n_rows == 0:
        return empty
    norms = np.linalg.norm(Z, axis=0)
    top = float(norms.max())
    if top == 0.0:
        return empty

    alive = norms > tol * top
    safe_norms = np.where(alive, norms, 1.0)
    R = Z.copy()
    chosen: list[int] = []
    while len(chosen) < min(n_rows, n_cols):
        ratio = np.where(alive, np.linalg.norm(R, axis=0) / safe_norms, 0.0)
        pick = int(np.argmax(ratio))
        if ratio[pick] <= tol:
            break
        q = R[:, pick] / np.linalg.norm(R[:, pick])
        # two passes of modified Gram-Schmidt keep q orthogonal to R
        for _ in range(2):
            R -= np.outer(q, q @ R)
        alive[pick] = False
        chosen.append(pick)

    if not chosen:
        return empty
    coefficients, *_ = np.linalg.lstsq(Z[:, chosen], Z, rcond=None)
    return RankBasis(indices=tuple(chosen), coefficients=coefficients)
