"""Dirichlet diffusion tree generative process and densities.

A K-leaf tree is grown by K sequential particles: the first travels from
time 0 to 1 along a single branch; each later particle follows existing
paths, diverging off a branch previously traversed by m particles with
instantaneous rate a(t)/m, where a(t) = c/(1-t), and choosing between
branches at a divergence point with probability proportional to the number
of particles that took each branch.  Node parameters then follow Brownian
motion along the branches, scaled per item group by a diffusion variance,
starting from zero at the root.

Density evaluations cover the tree structure alone, the joint over tree and
all node parameters, and the leaf parameters with internal nodes
marginalized out (a matrix normal whose row covariance is the tree
covariance).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .tree import Tree

__all__ = [
    "ItemGrouping",
    "NumericalDegeneracyError",
    "divergence_rate",
    "cumulative_divergence",
    "sample_divergence_time",
    "sample_tree",
    "diffuse_on_tree",
    "sample_ddt",
    "log_tree_prior",
    "log_marginal_leaf",
    "log_marginal_leaf_chol",
    "log_joint",
    "harmonic_numbers",
]

TIME_FLOOR = 1e-12  # 1 - t is clamped to at least this inside logs and powers


class NumericalDegeneracyError(RuntimeError):
    """A tree-induced covariance became numerically singular."""

    def __init__(self, message, tree=None):
        super().__init__(message)
        self.tree = tree


@dataclass(frozen=True)
class ItemGrouping:
    """Partition of the J items into G contiguous major groups."""

    group_of: np.ndarray  # (J,) int, values 0..G-1, nondecreasing blocks

    def __post_init__(self):
        g = np.asarray(self.group_of, dtype=np.int64)
        object.__setattr__(self, "group_of", g)
        if g.ndim != 1 or g.size == 0:
            raise ValueError("group_of must be a nonempty vector")
        if g[0] != 0 or np.any(np.diff(g) < 0) or np.any(np.diff(g) > 1):
            raise ValueError("groups must be contiguous blocks labelled 0..G-1")

    @classmethod
    def from_sizes(cls, sizes):
        sizes = [int(s) for s in sizes]
        if any(s <= 0 for s in sizes):
            raise ValueError("every group must contain at least one item")
        return cls(np.repeat(np.arange(len(sizes)), sizes))

    @property
    def n_items(self):
        return int(self.group_of.size)

    @property
    def n_groups(self):
        return int(self.group_of[-1]) + 1

    @property
    def sizes(self):
        return np.bincount(self.group_of, minlength=self.n_groups)

    def slices(self):
        """Column slice for each group, in group order."""
        edges = np.concatenate([[0], np.cumsum(self.sizes)])
        return [slice(int(edges[g]), int(edges[g + 1])) for g in range(self.n_groups)]

    def item_variances(self, sigma2):
        """Length-J vector mapping each item to its group's variance."""
        sigma2 = np.asarray(sigma2, dtype=float)
        if sigma2.shape != (self.n_groups,):
            raise ValueError(f"expected {self.n_groups} variances, got {sigma2.shape}")
        if np.any(sigma2 <= 0):
            raise ValueError("diffusion variances must be positive")
        return sigma2[self.group_of]


def divergence_rate(t, c):
    """Instantaneous branching rate a(t) = c / (1 - t)."""
    t = np.asarray(t, dtype=float)
    if c <= 0:
        raise ValueError("smoothness parameter c must be positive")
    if np.any(t < 0) or np.any(t >= 1):
        raise ValueError("divergence rate is defined on [0, 1)")
    return c / (1.0 - t)


def cumulative_divergence(t, c):
    """Integral of the branching rate from 0 to t: -c log(1 - t)."""
    t = np.asarray(t, dtype=float)
    if c <= 0:
        raise ValueError("smoothness parameter c must be positive")
    if np.any(t < 0) or np.any(t >= 1):
        raise ValueError("cumulative divergence is defined on [0, 1)")
    return -c * np.log1p(-t)


def sample_divergence_time(t_a, m, c, rng):
    """First divergence after t_a on a branch already traversed m times.

    Closed-form inversion of P(diverge by t) = 1 - ((1-t)/(1-t_a))^(c/m);
    the draw lies strictly inside (t_a, 1).
    """
    if not 0.0 <= t_a < 1.0:
        raise ValueError("branch start time must lie in [0, 1)")
    if m < 1:
        raise ValueError("traversal count m must be at least 1")
    if c <= 0:
        raise ValueError("smoothness parameter c must be positive")
    u = 1.0 - rng.random()  # in (0, 1]
    t = 1.0 - (1.0 - t_a) * u ** (m / c)
    # floating-point guards: keep strictly inside (t_a, 1)
    t = min(t, 1.0 - TIME_FLOOR)
    if t <= t_a:
        t = np.nextafter(t_a, 1.0)
    return float(t)


def sample_tree(n_leaves, c, rng):
    """Topology and divergence times from the sequential particle scheme."""
    if n_leaves < 1:
        raise ValueError("need at least one leaf")
    parent = [-1, 0]
    time = [0.0, 1.0]
    label = [-1, 0]
    children = [[1], []]

    def leaves_under(u):
        total, stack = 0, [u]
        while stack:
            x = stack.pop()
            if label[x] >= 0:
                total += 1
            stack.extend(children[x])
        return total

    for i in range(1, n_leaves):
        x = 0
        while True:
            kids = children[x]
            if len(kids) == 1:
                ch = kids[0]
            else:
                left = leaves_under(kids[0])
                right = leaves_under(kids[1])
                ch = kids[0] if rng.random() * (left + right) < left else kids[1]
            m = leaves_under(ch)
            t_div = sample_divergence_time(time[x], m, c, rng)
            if t_div < time[ch]:
                split = len(parent)
                parent.append(x)
                time.append(t_div)
                label.append(-1)
                children.append([ch])
                leaf = len(parent)
                parent.append(split)
                time.append(1.0)
                label.append(i)
                children.append([])
                children[x] = [split if k == ch else k for k in children[x]]
                parent[ch] = split
                children[split].append(leaf)
                break
            x = ch  # reached the divergence point without branching

    return Tree(np.array(parent), np.array(time), np.array(label))


def diffuse_on_tree(tree, sigma2, grouping, rng):
    """Brownian node parameters along a fixed tree.

    Returns a (2K, J) array indexed by node id; the root row is zero and
    each non-root row is its parent plus N(0, sigma_g^2 * dt) noise per
    item.  Leaf rows ordered by label form the logit-scale class profiles.
    """
    item_var = grouping.item_variances(sigma2)
    params = np.zeros((tree.n_nodes, grouping.n_items))
    order = tree.subtree_nodes(tree.root)
    for u in order:
        p = int(tree.parent[u])
        if p < 0:
            continue
        dt = float(tree.time[u] - tree.time[p])
        params[u] = params[p] + rng.standard_normal(grouping.n_items) * np.sqrt(
            item_var * dt)
    return params


def leaf_matrix(tree, node_params):
    """Rows of node_params at the leaves, ordered by class label."""
    return node_params[tree.leaf_nodes()]


def sample_ddt(n_leaves, c, sigma2, grouping, rng):
    """Draw (tree, node parameters, leaf matrix) from the full process."""
    tree = sample_tree(n_leaves, c, rng)
    params = diffuse_on_tree(tree, sigma2, grouping, rng)
    return tree, params, leaf_matrix(tree, params)


def harmonic_numbers(n):
    """H_0..H_n with H_0 = 0."""
    return np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n + 1))])


def _segment_terms(tree):
    """(l, r, m, t_v) per internal node v (segments ending at leaves carry
    no topology or branch-length factor: leaves sit at time 1 surely)."""
    out = []
    for v in range(tree.n_nodes):
        if v == tree.root or tree.is_leaf(v):
            continue
        kids = tree.children(v)
        l = tree.leaves_under(kids[0])
        r = tree.leaves_under(kids[1])
        out.append((l, r, l + r, float(tree.time[v])))
    return out


def log_tree_prior(tree, c):
    """Log-density of (topology, divergence times) for rate c/(1-t).

    Per internal node v with l and r leaves under its children and
    m = l + r: a topology factor (l-1)! (r-1)! / (m-1)! and a time factor
    c (1-t_v)^(c J_v - 1), where J_v = H_{m-1} - H_{l-1} - H_{r-1} uses
    harmonic numbers H.
    """
    if c <= 0:
        raise ValueError("smoothness parameter c must be positive")
    h = harmonic_numbers(2 * tree.n_leaves)
    total = 0.0
    for l, r, m, t_v in _segment_terms(tree):
        if t_v >= 1.0:
            return -np.inf
        j_v = h[m - 1] - h[l - 1] - h[r - 1]
        total += math.lgamma(l) + math.lgamma(r) - math.lgamma(m)
        total += math.log(c) + (c * j_v - 1.0) * math.log(max(1.0 - t_v, TIME_FLOOR))
    return total


def tree_cholesky(tree):
    """Lower Cholesky factor of the tree covariance.

    Raises NumericalDegeneracyError (carrying the tree) if the covariance
    is numerically singular, e.g. when divergence times collapse together.
    """
    sigma = tree.covariance()
    try:
        return cholesky(sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(
            f"tree covariance is not positive definite: {exc}", tree=tree) from exc


def log_marginal_leaf_chol(eta, chol, sigma2, grouping):
    """Leaf-parameter log-density given a lower Cholesky factor of the
    row covariance (internal nodes already marginalized out).

    Columns are independent; column j in group g is K-variate normal with
    covariance sigma_g^2 * Sigma.
    """
    eta = np.asarray(eta, dtype=float)
    k = chol.shape[0]
    if eta.shape != (k, grouping.n_items):
        raise ValueError(f"leaf matrix must be {k} x {grouping.n_items}")
    sigma2 = np.asarray(sigma2, dtype=float)
    logdet_sigma = 2.0 * np.log(np.diag(chol)).sum()
    white = solve_triangular(chol, eta, lower=True)
    quad_cols = (white ** 2).sum(axis=0)
    total = 0.0
    for g, cols in enumerate(grouping.slices()):
        j_g = cols.stop - cols.start
        quad = quad_cols[cols].sum() / sigma2[g]
        total += -0.5 * (j_g * k * math.log(2.0 * math.pi)
                         + j_g * (k * math.log(sigma2[g]) + logdet_sigma)
                         + quad)
    return float(total)


def log_marginal_leaf(eta, tree, sigma2, grouping):
    """Leaf-parameter log-density under a given tree (matrix normal with
    row covariance sigma_g^2 * tree covariance per item group)."""
    return log_marginal_leaf_chol(eta, tree_cholesky(tree), sigma2, grouping)


def log_joint(tree, node_params, c, sigma2, grouping):
    """Log-density of tree structure plus all non-root node parameters."""
    total = log_tree_prior(tree, c)
    if not np.isfinite(total):
        return total
    item_var = grouping.item_variances(sigma2)
    for u in range(tree.n_nodes):
        p = int(tree.parent[u])
        if p < 0:
            continue
        dt = float(tree.time[u] - tree.time[p])
        diff = node_params[u] - node_params[p]
        var = item_var * dt
        total += -0.5 * (np.log(2.0 * math.pi * var) + diff ** 2 / var).sum()
    return float(total)
