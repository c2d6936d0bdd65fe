"""Monte Carlo checks of the expected-perturbation bounds for tree corrections.

For one constraint the compressed correction moves leaf ``j`` by
``eps_j = z_j (z @ y) / (z @ z)``. Averaging ``eps_j^2`` over a uniform
leaf and over leaf-mean vectors ``y`` drawn uniformly on a sphere gives
the quantities checked here.

Two normalizations of ``y`` are run: the unit sphere (``"unit"``) and the
sphere of radius ``sqrt(L)`` (``"scaled"``) so that coordinates have unit
variance. Under ``"scaled"`` the expectation equals ``1/L`` exactly, so
the ``1/L`` bound is tight there; under ``"unit"`` it is ``1/L^2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .constraint import ZVector
from .errors import InvalidParameter, ZeroZ

CHUNK = 100_000
NORMALIZATIONS = ("scaled", "unit")
N_SE = 3.0


def sample_unit_sphere(L: int, seed=0, size: int | None = None) -> np.ndarray:
    """Normalized i.i.d. standard normals; shape ``(L,)`` or ``(size, L)``."""
    if L < 1:
        raise InvalidParameter("L must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((1 if size is None else size, L))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g[0] if size is None else g


class _Moments:
    """Chunked mean and standard error with a fixed summation order."""

    def __init__(self):
        self.sums: list[float] = []
        self.sq: list[float] = []
        self.n = 0

    def add(self, x: np.ndarray) -> None:
        self.sums.append(float(np.sum(x)))
        self.sq.append(float(np.sum(x * x)))
        self.n += x.size

    @property
    def mean(self) -> float:
        return math.fsum(self.sums) / self.n

    @property
    def standard_error(self) -> float:
        m = self.mean
        var = max(math.fsum(self.sq) / self.n - m * m, 0.0) * self.n / max(self.n - 1, 1)
        return math.sqrt(var / self.n)


def _chunks(n: int):
    done = 0
    while done < n:
        k = min(CHUNK, n - done)
        yield k
        done += k


@dataclass(frozen=True)
class SphereDotEstimate:
    L: int
    n_samples: int
    estimate: float
    standard_error: float

    @property
    def target(self) -> float:
        return 1.0 / self.L

    def within(self, rel: float = 0.02, n_se: float = N_SE) -> bool:
        tol = max(rel * self.target, n_se * self.standard_error)
        return abs(self.estimate - self.target) <= tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target"] = self.target
        d["within_tolerance"] = self.within()
        return d


def sphere_dot_mc(L: int, n_samples: int, seed=0) -> SphereDotEstimate:
    """Estimate ``E[(zbar @ y)^2]`` for ``y`` uniform on the unit sphere.

    By rotation invariance ``zbar`` is taken as the first basis vector, so
    the quantity is the squared first coordinate.
    """
    if L < 1:
        raise InvalidParameter("L must be at least 1")
    rng = np.random.default_rng(seed)
    acc = _Moments()
    for k in _chunks(n_samples):
        y = sample_unit_sphere(L, rng, size=k)
        acc.add(y[:, 0] ** 2)
    return SphereDotEstimate(L=L, n_samples=n_samples, estimate=acc.mean, standard_error=acc.standard_error)


def beta_variance(a: float, b: float) -> float:
    return a * b / ((a + b) ** 2 * (a + b + 1))


@dataclass(frozen=True)
class PerturbationReport:
    L: int
    n_samples: int
    normalization: str
    empirical_mean_eps2: float
    standard_error: float
    bound: float
    exact_form: float
    exact_form_l2: float
    z_norm_ratio: float
    asserted: bool = True

    @property
    def passed(self) -> bool | None:
        if not self.asserted:
            return None
        return self.empirical_mean_eps2 <= self.bound + N_SE * self.standard_error

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _z_values(z) -> np.ndarray:
    v = np.asarray(z.values if isinstance(z, ZVector) else z, dtype=float).reshape(-1)
    if v.size == 0 or not np.any(v != 0):
        raise ZeroZ("the imbalance vector is zero; the bound is vacuous")
    return v


def _radius(L: int, normalization: str) -> float:
    if normalization not in NORMALIZATIONS:
        raise InvalidParameter(f"normalization must be one of {NORMALIZATIONS}")
    return math.sqrt(L) if normalization == "scaled" else 1.0


def _eps2_mc(v: np.ndarray, scale: np.ndarray, n_samples: int, seed, radius: float) -> _Moments:
    """Sample ``(scale_j * v_j * (v @ y) / (v @ v))^2`` at a uniform leaf ``j``."""
    L = v.size
    vv = float(v @ v)
    rng = np.random.default_rng(seed)
    acc = _Moments()
    for k in _chunks(n_samples):
        y = radius * sample_unit_sphere(L, rng, size=k)
        j = rng.integers(0, L, size=k)
        eps = scale[j] * v[j] * (y @ v) / vv
        acc.add(eps * eps)
    return acc


def perturbation_mc(z, n_samples: int, seed=0, normalization: str = "scaled") -> PerturbationReport:
    """Mean squared compressed-representation perturbation against ``1/L``.

    ``exact_form`` is ``|z|_1^2 / (L^2 |z|_2^2)``; ``exact_form_l2`` is the
    value obtained by keeping ``sum_j z_j^2 = |z|_2^2`` in the average over
    leaves, i.e. ``radius^2 / L^2``.
    """
    v = _z_values(z)
    L = v.size
    radius = _radius(L, normalization)
    acc = _eps2_mc(v, np.ones(L), n_samples, seed, radius)
    n1, n2 = float(np.abs(v).sum()), float(np.linalg.norm(v))
    return PerturbationReport(
        L=L,
        n_samples=n_samples,
        normalization=normalization,
        empirical_mean_eps2=acc.mean,
        standard_error=acc.standard_error,
        bound=1.0 / L,
        exact_form=n1**2 / (L**2 * n2**2),
        exact_form_l2=radius**2 / L**2,
        z_norm_ratio=n1 / (math.sqrt(L) * n2),
    )


def explicit_bound_report(
    z, m: int, noise_variance: float, n_samples: int, seed=0, normalization: str = "scaled"
) -> PerturbationReport:
    """Explicit-representation perturbation with ``m`` rows in every leaf.

    The perturbation is ``rho X2_j X3``, which for equal counts reduces to
    ``w z_j (z @ y) / (z @ z)`` with ``w = m / (m + s2)``. ``bound`` holds
    ``(s2 / (m + s2))^2 / L`` and ``exact_form_l2`` holds
    ``w^2 radius^2 / L^2``; nothing is asserted.
    """
    if m < 1:
        raise InvalidParameter("m must be at least 1")
    if noise_variance < 0:
        raise InvalidParameter("noise_variance must be nonnegative")
    v = _z_values(z)
    L = v.size
    radius = _radius(L, normalization)
    w = m / (m + noise_variance)
    acc = _eps2_mc(v, np.full(L, w), n_samples, seed, radius)
    n1, n2 = float(np.abs(v).sum()), float(np.linalg.norm(v))
    return PerturbationReport(
        L=L,
        n_samples=n_samples,
        normalization=normalization,
        empirical_mean_eps2=acc.mean,
        standard_error=acc.standard_error,
        bound=(noise_variance / (m + noise_variance)) ** 2 / L,
        exact_form=w**2 * n1**2 / (L**2 * n2**2),
        exact_form_l2=w**2 * radius**2 / L**2,
        z_norm_ratio=n1 / (math.sqrt(L) * n2),
        asserted=False,
    )
