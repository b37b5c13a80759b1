"""Posterior summaries: label-switching correction, MAP tree, point and
interval estimates, and evaluation metrics."""

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import lcm
from .sampler import PosteriorDraws
from .tree import Tree

__all__ = [
    "PosteriorDraws",
    "align_labels",
    "apply_permutation",
    "ecr_relabel",
    "map_tree",
    "summarize",
    "rmse_theta",
    "ari",
]


def align_labels(z_pivot, z, k=None):
    """Permutation `perm` (old label -> new label) minimizing disagreement
    between perm[z] and the pivot allocation, solved exactly as an
    assignment problem on the label co-occurrence matrix."""
    z_pivot = np.asarray(z_pivot)
    z = np.asarray(z)
    if z_pivot.shape != z.shape:
        raise ValueError("allocations must have equal length")
    observed = int(max(z_pivot.max(initial=-1), z.max(initial=-1))) + 1
    k = observed if k is None else max(int(k), observed)
    agree = np.zeros((k, k))
    np.add.at(agree, (z, z_pivot), 1.0)
    rows, cols = linear_sum_assignment(-agree)
    perm = np.empty(k, dtype=np.int64)
    perm[rows] = cols
    return perm


def apply_permutation(draws, index, perm):
    """Relabel one stored draw in place: labels, pi, eta rows, tree leaves."""
    inv = np.argsort(perm)
    draws.z[index] = perm[draws.z[index]]
    draws.pi[index] = draws.pi[index][inv]
    draws.eta[index] = draws.eta[index][inv]
    tree = draws.trees[index]
    if tree is not None:
        relabelled = tree.copy()
        mask = relabelled.leaf_label >= 0
        relabelled.leaf_label[mask] = perm[relabelled.leaf_label[mask]]
        draws.trees[index] = relabelled


def ecr_relabel(draws):
    """Equivalence-class-representative relabeling of all stored draws.

    The pivot is the label allocation of the highest log-joint draw; each
    draw is permuted toward the pivot by exact assignment.  Returns a new
    PosteriorDraws; the input is unchanged.
    """
    if draws.eta.shape[1] < 2:
        return draws
    out = PosteriorDraws(
        trees=list(draws.trees),
        eta=draws.eta.copy(),
        c=draws.c.copy(),
        sigma2=draws.sigma2.copy(),
        z=draws.z.copy(),
        pi=draws.pi.copy(),
        log_joint=draws.log_joint.copy(),
        iterations=draws.iterations.copy(),
        grouping=draws.grouping,
        config=draws.config,
        tree_accept_rate=draws.tree_accept_rate,
    )
    k = out.eta.shape[1]
    pivot = out.z[int(np.argmax(out.log_joint))].copy()
    for d in range(out.n_draws):
        perm = align_labels(pivot, out.z[d], k=k)
        if not np.array_equal(perm, np.arange(perm.size)):
            apply_permutation(out, d, perm)
    return out


def map_tree(draws):
    """Tree and covariance of the maximum log-joint draw (earliest wins ties)."""
    best = int(np.argmax(draws.log_joint))
    tree = draws.trees[best]
    if tree is None:
        raise ValueError("these draws carry no trees (independent prior)")
    return tree, tree.covariance()


def _interval(samples, level=0.95):
    lo = (1.0 - level) / 2.0
    return (np.quantile(samples, lo, axis=0),
            np.quantile(samples, 1.0 - lo, axis=0))


def summarize(draws, level=0.95):
    """Posterior means, equal-tailed intervals, and modal class labels.

    Expects relabelled draws.  z_map assigns each subject its most frequent
    label across draws (ties to the lowest label).
    """
    theta = draws.theta()
    pi = draws.pi
    sigma2 = draws.sigma2
    theta_ci = _interval(theta, level)
    pi_ci = _interval(pi, level)
    sigma2_ci = _interval(sigma2, level)
    out = {
        "theta_mean": theta.mean(axis=0),
        "theta_lo": theta_ci[0],
        "theta_hi": theta_ci[1],
        "pi_mean": pi.mean(axis=0),
        "pi_lo": pi_ci[0],
        "pi_hi": pi_ci[1],
        "sigma2_mean": sigma2.mean(axis=0),
        "sigma2_lo": sigma2_ci[0],
        "sigma2_hi": sigma2_ci[1],
    }
    if np.isfinite(draws.c).all():
        out["c_mean"] = float(draws.c.mean())
        out["c_lo"], out["c_hi"] = (float(v) for v in _interval(draws.c, level))
    k = pi.shape[1]
    counts = np.stack([(draws.z == cls).mean(axis=0) for cls in range(k)], axis=1)
    out["z_map"] = lcm.class_assignment_map(counts)
    out["z_probs"] = counts
    return out


def rmse_theta(est, truth):
    """Root mean squared error over all K*J response probabilities."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    return float(np.sqrt(((est - truth) ** 2).mean()))


def ari(z_a, z_b):
    """Adjusted Rand index between two partitions, in [-1, 1]."""
    z_a = np.asarray(z_a)
    z_b = np.asarray(z_b)
    if z_a.shape != z_b.shape:
        raise ValueError("partitions must have equal length")
    n = z_a.size
    _, a_inv = np.unique(z_a, return_inverse=True)
    _, b_inv = np.unique(z_b, return_inverse=True)
    table = np.zeros((a_inv.max() + 1, b_inv.max() + 1))
    np.add.at(table, (a_inv, b_inv), 1.0)

    def comb2(x):
        return x * (x - 1.0) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    total = comb2(float(n))
    expected = sum_rows * sum_cols / total if total else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        return 1.0 if sum_cells == expected else 0.0
    return float((sum_cells - expected) / (max_index - expected))
