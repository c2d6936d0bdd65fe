from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gfe.constraint import constrain_compressed, constrain_explicit, z_matrix_for
from gfe.data import synth_beta_demo
from gfe.errors import DimensionMismatch, EmptyGroup, InvalidParameter
from gfe.kernelgp import (
    RBF,
    GpModel,
    SignedMeasure,
    TreeKernel,
    fit_bordered,
    fit_constrained,
    predict_variance,
    quadrature_corner,
    quadrature_row,
)
from gfe.tree import grow

from helpers import random_instance

seeds = st.integers(0, 2**31 - 1)


def leaf_points(tree):
    """One representative point inside every leaf box."""
    lo = np.where(np.isfinite(tree.box_lower), tree.box_lower, tree.box_upper - 1.0)
    hi = np.where(np.isfinite(tree.box_upper), tree.box_upper, lo + 2.0)
    lo = np.where(np.isfinite(lo), lo, -1.0)
    hi = np.where(np.isfinite(hi), hi, 1.0)
    return 0.5 * (lo + hi)


def test_rbf_values():
    k = RBF([2.0], amplitude=3.0)
    np.testing.assert_allclose(k([[0.0]], [[2.0]]), [[3.0 * np.exp(-0.5)]])
    np.testing.assert_allclose(k.diag(np.zeros((4, 1))), 3.0)


def test_rbf_rejects_bad_parameters():
    with pytest.raises(InvalidParameter):
        RBF([0.0])
    with pytest.raises(InvalidParameter):
        RBF([1.0], amplitude=-1.0)


def test_zero_measure_row_and_corner():
    k = RBF([1.0])
    q = SignedMeasure.empty(1)
    np.testing.assert_array_equal(quadrature_row(k, q, np.zeros((3, 1))), 0.0)
    assert quadrature_corner(k, q) == 0.0


def test_two_atom_row():
    k = RBF([0.7])
    q = SignedMeasure(np.array([[0.1], [0.9]]), np.array([1.0, -1.0]))
    x0 = np.array([[0.3], [2.0]])
    expect = k(x0, [[0.1]])[:, 0] - k(x0, [[0.9]])[:, 0]
    np.testing.assert_allclose(quadrature_row(k, q, x0), expect)


def test_single_atom_corner():
    q = SignedMeasure(np.array([[0.4]]), np.array([1.0]))
    assert quadrature_corner(RBF([1.0], 1.0), q) == pytest.approx(1.0)


def test_measure_dimension_check():
    with pytest.raises(DimensionMismatch):
        SignedMeasure(np.zeros((2, 1)), np.ones(3))
    q = SignedMeasure(np.zeros((2, 2)), np.array([1.0, -1.0]))
    with pytest.raises(DimensionMismatch):
        quadrature_row(RBF([1.0]), q, np.zeros((1, 1)))


def test_measure_from_groups():
    ds = synth_beta_demo(10, (1.0, 1.0), seed=0)
    q = SignedMeasure.from_groups(ds, "group=A", "group=B")
    assert abs(q.total) < 1e-12
    np.testing.assert_allclose(np.sort(q.weights), [-0.1] * 10 + [0.1] * 10)
    with pytest.raises(EmptyGroup):
        SignedMeasure.from_groups(ds, "group=A", "group=C")


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_tree_kernel_quadrature_gives_z(seed):
    rng = np.random.default_rng(seed)
    t, ds = random_instance(rng, max_leaves=40)
    z = z_matrix_for(t, ds, [("group=A", "group=B")])[:, 0]
    q = SignedMeasure.from_groups(ds, "group=A", "group=B")
    kern = TreeKernel(t)
    pts = leaf_points(t)
    np.testing.assert_allclose(quadrature_row(kern, q, pts), z, atol=1e-12)
    assert quadrature_corner(kern, q) == pytest.approx(float(z @ z), abs=1e-12)
    # the bincount shortcut agrees with the generic double sum
    generic = float(q.weights @ kern(q.points, q.points) @ q.weights)
    assert quadrature_corner(kern, q) == pytest.approx(generic, abs=1e-12)


def test_empty_measure_equals_plain_regression():
    rng = np.random.default_rng(0)
    X = rng.random((20, 1))
    y = np.sin(6 * X[:, 0])
    k = RBF([0.2])
    plain = fit_constrained(k, X, y, None, 0.1)
    empty = fit_constrained(k, X, y, SignedMeasure.empty(1), 0.1)
    Xs = np.linspace(0, 1, 7)[:, None]
    np.testing.assert_allclose(empty.predict_mean(Xs), plain.predict_mean(Xs), atol=1e-8)
    assert empty.jitter > 0  # zero corner needs the jitter policy


@settings(max_examples=30, deadline=None)
@given(seed=seeds, s2=st.floats(0.01, 3.0))
def test_tree_kernel_system_reproduces_compressed_correction(seed, s2):
    rng = np.random.default_rng(seed)
    t, ds = random_instance(rng, max_leaves=64)
    z = z_matrix_for(t, ds, [("group=A", "group=B")])[:, 0]
    q = SignedMeasure.from_groups(ds, "group=A", "group=B")
    pts = leaf_points(t)
    sys_ = fit_constrained(TreeKernel(t), pts, t.leaf_mean, q, s2)
    expect = constrain_compressed(t, z, s2, remove_prior=False).leaf_values
    np.testing.assert_allclose(sys_.predict_mean(pts), expect, atol=1e-8)


def test_rbf_constraint_on_beta_demo():
    ds = synth_beta_demo(100, (10.0, 5.0), noise=0.05, seed=3)
    gp = GpModel(RBF([0.1]), ds.features, ds.targets, 0.01).constrain(ds, "group=A", "group=B")
    assert abs(gp.system.constraint_value()) <= 1e-6
    a = ds.features[[i for i, g in enumerate(ds.groups) if "group=A" in g]]
    b = ds.features[[i for i, g in enumerate(ds.groups) if "group=B" in g]]
    assert abs(gp.predict(a).mean() - gp.predict(b).mean()) <= 1e-6


def test_variance_reverts_to_amplitude_far_away():
    rng = np.random.default_rng(1)
    X = rng.random((15, 1))
    sys_ = fit_constrained(RBF([0.1], 2.5), X, rng.standard_normal(15), None, 0.1)
    assert predict_variance(sys_, [50.0]) == pytest.approx(2.5, abs=1e-12)


def test_variance_vanishes_at_noiseless_training_point():
    X = np.array([[0.0], [1.0], [2.0]])
    sys_ = fit_constrained(RBF([0.3]), X, np.array([1.0, -1.0, 0.5]), None, 0.0)
    assert predict_variance(sys_, [1.0]) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_variance_matches_explicit_inverse(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((12, 2))
    q = SignedMeasure(rng.random((4, 2)), np.array([0.5, 0.5, -0.5, -0.5]))
    k = RBF([0.3, 0.5], 1.3)
    sys_ = fit_constrained(k, X, rng.standard_normal(12), q, 0.2)
    Xs = rng.random((5, 2))
    Ks = sys_.cross_covariance(Xs)
    expect = k.diag(Xs) - np.einsum("ij,jk,ik->i", Ks, np.linalg.inv(sys_.matrix), Ks)
    np.testing.assert_allclose(sys_.predict_variance(Xs), expect, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_constraint_never_increases_variance(seed):
    rng = np.random.default_rng(seed)
    X = rng.random((15, 1))
    y = rng.standard_normal(15)
    q = SignedMeasure(rng.random((6, 1)), np.repeat([1 / 3, -1 / 3], 3))
    k = RBF([0.25])
    Xs = np.linspace(-0.5, 1.5, 30)[:, None]
    with_c = fit_constrained(k, X, y, q, 0.1).predict_variance(Xs)
    without = fit_constrained(k, X, y, None, 0.1).predict_variance(Xs)
    assert np.all(with_c <= without + 1e-10)


@settings(max_examples=30, deadline=None)
@given(
    sa=st.floats(0.1, 3.0), sb=st.floats(0.1, 3.0), rho=st.floats(-0.95, 0.95),
)
def test_difference_of_gaussians_covariance_is_degenerate(sa, sb, rho):
    # two variables a, b with covariance C; c = a - b is the measure delta_a - delta_b
    C = np.array([[sa**2, rho * sa * sb], [rho * sa * sb, sb**2]])

    def kernel(P, Q):
        return C[np.asarray(P, int)[:, 0]][:, np.asarray(Q, int)[:, 0]]

    q = SignedMeasure(np.array([[0.0], [1.0]]), np.array([1.0, -1.0]))
    pts = np.array([[0.0], [1.0]])
    K = np.empty((3, 3))
    K[0, 0] = quadrature_corner(kernel, q)
    K[0, 1:] = K[1:, 0] = quadrature_row(kernel, q, pts)
    K[1:, 1:] = C
    expect = np.array([
        [sa**2 + sb**2 - 2 * rho * sa * sb, sa**2 - rho * sa * sb, rho * sa * sb - sb**2],
        [sa**2 - rho * sa * sb, sa**2, rho * sa * sb],
        [rho * sa * sb - sb**2, rho * sa * sb, sb**2],
    ])
    np.testing.assert_allclose(K, expect, atol=1e-12)
    eig = np.linalg.eigvalsh(K)
    assert abs(eig[0]) <= 1e-10 * eig[-1]


def test_bordered_system_matches_explicit_correction():
    rng = np.random.default_rng(4)
    X = rng.random((60, 1))
    y = rng.standard_normal(60)
    t = grow(X, y, max_depth=3, min_leaf_size=3)
    z = rng.dirichlet(np.ones(t.n_leaves)) - rng.dirichlet(np.ones(t.n_leaves))
    bs = fit_bordered(TreeKernel(t), X, y, z[t.apply(X)], 0.5)
    pts = leaf_points(t)
    np.testing.assert_allclose(bs.predict_mean(pts), constrain_explicit(t, z, 0.5).leaf_values, atol=1e-10)


def test_gp_model_unconstrained_and_constrained():
    ds = synth_beta_demo(30, (10.0, 5.0), seed=1)
    gp = GpModel(RBF([0.2]), ds.features, ds.targets, 0.05)
    np.testing.assert_array_equal(gp.predict(ds.features), gp.predict_unconstrained(ds.features))
    fair = gp.constrain(ds, "group=A", "group=B")
    assert fair.pairs == (("group=A", "group=B"),)
    assert not np.allclose(fair.predict(ds.features), gp.predict(ds.features))


def test_negative_noise_rejected():
    with pytest.raises(InvalidParameter):
        fit_constrained(RBF([1.0]), np.zeros((2, 1)), np.zeros(2), None, -0.1)
