"""Independent oracles and instance builders shared by the tests.

The oracles deliberately avoid the package's fast paths: they assemble the
full dense systems and solve them with plain Gaussian elimination or
``numpy.linalg.solve``.
"""

from __future__ import annotations

import numpy as np

from gfe.data import Dataset, make_tag
from gfe.tree import RegressionTree, grow


def gauss_solve(A, b) -> np.ndarray:
    """Gaussian elimination with partial pivoting, written out by hand."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float).reshape(len(A), -1)
    n = len(A)
    M = np.hstack([A, b])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(M[col:, col])))
        M[[col, piv]] = M[[piv, col]]
        for r in range(col + 1, n):
            M[r] -= (M[r, col] / M[col, col]) * M[col]
    x = np.zeros((n, b.shape[1]))
    for r in range(n - 1, -1, -1):
        x[r] = (M[r, n:] - M[r, r + 1 : n] @ x[r + 1 :]) / M[r, r]
    return x[:, 0] if x.shape[1] == 1 else x


def dense_compressed_oracle(y, z, noise_variance, remove_prior=True) -> np.ndarray:
    """Posterior mean at every leaf from the full augmented GP system.

    One pseudo-observation per leaf (the leaf mean) with the indicator
    kernel, which between distinct leaves is the identity, plus a
    noiseless constraint observation with covariance ``z`` against each
    leaf and ``z @ z`` against itself.

    Without noise that system is singular (the constraint observation is
    a fixed combination of the leaf observations), so ``noise_variance=0``
    uses the zero-noise limit instead: the zero-corner Lagrange system
    ``[[I, z], [z^T, 0]]``. For ``z = 0`` that system is rank deficient
    with a free multiplier; the minimum-norm solution fixes it at 0.
    """
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    L = y.size
    if noise_variance == 0:
        A = np.zeros((L + 1, L + 1))
        A[:L, :L] = np.eye(L)
        A[:L, L] = z
        A[L, :L] = z
        return np.linalg.lstsq(A, np.concatenate([y, [0.0]]), rcond=None)[0][:L]
    A = np.zeros((L + 1, L + 1))
    A[0, 0] = z @ z
    A[0, 1:] = z
    A[1:, 0] = z
    A[1:, 1:] = (1.0 + noise_variance) * np.eye(L)
    alpha = np.linalg.solve(A, np.concatenate([[0.0], y]))
    cross = np.column_stack([z, np.eye(L)])
    f = cross @ alpha
    return f * (1.0 + noise_variance) if remove_prior else f


def dense_explicit_oracle(tree: RegressionTree, X, y, z, noise_variance) -> np.ndarray:
    """Leaf values from the dense (n+1) bordered row-level system.

    ``[[K + s2 I, b], [b^T, 0]]`` with the tree indicator kernel ``K``
    over training rows and border ``b_i = z`` of row ``i``'s leaf;
    the leaf value is the kernel-weighted sum of the solved weights.
    """
    X = np.asarray(X, float)
    leaf = tree.apply(X)
    n = X.shape[0]
    K = (leaf[:, None] == leaf[None, :]).astype(float)
    b = np.asarray(z, float)[leaf]
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = K + noise_variance * np.eye(n)
    A[:n, n] = b
    A[n, :n] = b
    sol = np.linalg.solve(A, np.concatenate([np.asarray(y, float), [0.0]]))
    onehot = (np.arange(tree.n_leaves)[:, None] == leaf[None, :]).astype(float)
    return onehot @ sol[:n]


def weighted_ls_oracle(x1, weights, z) -> np.ndarray:
    """``argmin sum_j weights_j (f_j - x1_j)^2`` subject to ``z @ f = 0``.

    Solved through the dense Lagrange (KKT) system.
    """
    x1 = np.asarray(x1, float)
    w = np.asarray(weights, float)
    z = np.asarray(z, float)
    L = x1.size
    A = np.zeros((L + 1, L + 1))
    A[:L, :L] = np.diag(2.0 * w)
    A[:L, L] = z
    A[L, :L] = z
    rhs = np.concatenate([2.0 * w * x1, [0.0]])
    return np.linalg.solve(A, rhs)[:L]


def random_groups(rng, n, p=0.5) -> tuple:
    """Random ``group=A``/``group=B`` tags with both groups nonempty."""
    g = rng.random(n) < p
    g[0], g[-1] = True, False
    return tuple(frozenset({make_tag("group", "A" if a else "B")}) for a in g)


def random_instance(rng, max_leaves=128, d=None):
    """A fitted tree on random data with 2..max_leaves leaves.

    Returns ``(tree, dataset)``; the dataset carries random group tags.
    """
    while True:
        target_l = int(rng.integers(2, max_leaves + 1))
        min_leaf = int(rng.integers(1, 4))
        n = target_l * min_leaf + int(rng.integers(0, 2 * target_l + 1))
        dim = int(rng.integers(1, 4)) if d is None else d
        X = rng.random((n, dim))
        y = rng.standard_normal(n) + 3.0 * X[:, 0]
        # depth cap keeps the leaf count near the target
        depth = int(np.ceil(np.log2(target_l))) + 1
        tree = grow(X, y, max_depth=depth, min_leaf_size=min_leaf)
        if 2 <= tree.n_leaves <= max_leaves:
            data = Dataset(X, y, random_groups(rng, n, p=float(rng.uniform(0.2, 0.8))),
                           tuple(f"x{i}" for i in range(dim)), "y", ("group",))
            return tree, data


def stump_tree(leaf_means, leaf_counts=None) -> RegressionTree:
    """Balanced 1-D tree with leaf ``j`` covering ``(j - 0.5, j + 0.5]``.

    Built directly as arrays, so it scales to very many leaves.
    """
    means = np.asarray(leaf_means, float)
    L = means.size
    counts = np.ones(L, np.int64) if leaf_counts is None else np.asarray(leaf_counts, np.int64)
    n_nodes = 2 * L - 1
    feature = np.full(n_nodes, -1, np.int64)
    threshold = np.zeros(n_nodes)
    left = np.full(n_nodes, -1, np.int64)
    right = np.full(n_nodes, -1, np.int64)
    leaf_index = np.full(n_nodes, -1, np.int64)
    lower = np.full((L, 1), -np.inf)
    upper = np.full((L, 1), np.inf)
    next_id = 1
    stack = [(0, 0, L)]  # node, first leaf, end leaf
    while stack:
        node, a, b = stack.pop()
        if b - a == 1:
            leaf_index[node] = a
            if a > 0:
                lower[a, 0] = a - 0.5
            if a < L - 1:
                upper[a, 0] = a + 0.5
            continue
        mid = (a + b) // 2
        feature[node] = 0
        threshold[node] = mid - 0.5
        left[node], right[node] = next_id, next_id + 1
        next_id += 2
        stack.append((right[node], mid, b))
        stack.append((left[node], a, mid))
    return RegressionTree(feature, threshold, left, right, leaf_index, means, counts, lower, upper)


def random_z(rng, L) -> np.ndarray:
    """Difference of two random probability vectors over ``L`` leaves."""
    a = rng.dirichlet(np.ones(L))
    b = rng.dirichlet(np.ones(L))
    return a - b
