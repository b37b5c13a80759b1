"""Latent class model likelihoods and class-level conditional draws."""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .ddt import ItemGrouping

__all__ = [
    "Dataset",
    "expit",
    "logit",
    "marginal_loglik",
    "class_loglik_matrix",
    "sample_z",
    "sample_pi",
    "class_assignment_map",
]

EXPIT_CLAMP = 1e-15  # expit output kept this far from exact 0/1
THETA_FLOOR = 1e-9  # response probabilities clamped before Bernoulli logs


@dataclass(frozen=True)
class Dataset:
    """N x J binary response matrix plus the item grouping."""

    y: np.ndarray
    grouping: ItemGrouping

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.uint8)
        object.__setattr__(self, "y", y)
        if y.ndim != 2:
            raise ValueError("responses must form an N x J matrix")
        if y.shape[1] != self.grouping.n_items:
            raise ValueError(
                f"{y.shape[1]} item columns but grouping covers "
                f"{self.grouping.n_items} items")
        if y.size and y.max() > 1:
            raise ValueError("responses must be 0/1")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def j(self):
        return self.y.shape[1]


def expit(x):
    """Inverse logit, clamped away from exact 0 and 1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return np.clip(out, EXPIT_CLAMP, 1.0 - EXPIT_CLAMP)


def logit(p):
    """Log-odds; defined on the open interval (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("logit requires probabilities strictly inside (0, 1)")
    return np.log(p) - np.log1p(-p)


def class_loglik_matrix(y, theta):
    """(N, K) matrix of log P(row i | class k)."""
    y = np.asarray(y, dtype=float)
    theta = np.clip(np.asarray(theta, dtype=float), THETA_FLOOR, 1.0 - THETA_FLOOR)
    log_t = np.log(theta)
    log_1mt = np.log1p(-theta)
    return y @ log_t.T + (1.0 - y) @ log_1mt.T


def marginal_loglik(y, theta, pi):
    """Log-likelihood with class labels summed out, via log-sum-exp."""
    ll = class_loglik_matrix(y, theta) + np.log(np.asarray(pi, dtype=float))
    return float(logsumexp(ll, axis=1).sum())


def sample_z(y, theta, pi, rng):
    """Class labels from their categorical conditionals, one uniform each."""
    ll = class_loglik_matrix(y, theta) + np.log(np.asarray(pi, dtype=float))
    ll -= ll.max(axis=1, keepdims=True)
    probs = np.exp(ll)
    probs /= probs.sum(axis=1, keepdims=True)
    cum = np.cumsum(probs, axis=1)
    u = rng.random(y.shape[0])
    return (u[:, None] > cum).sum(axis=1).astype(np.int64)


def sample_pi(z, alpha, n_classes, rng):
    """Conjugate Dirichlet update from label counts."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (n_classes,):
        raise ValueError(f"need {n_classes} concentration entries")
    counts = np.bincount(np.asarray(z, dtype=np.int64), minlength=n_classes)
    return rng.dirichlet(alpha + counts)


def class_assignment_map(probs):
    """Most probable class per row; ties break to the lowest index."""
    return np.argmax(np.asarray(probs), axis=1).astype(np.int64)
