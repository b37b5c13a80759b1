"""MH-within-Gibbs sampler over the full model state.

Each iteration updates, in order: the tree (a subtree detach/reattach
Metropolis-Hastings move, when the tree is being sampled), the latent
threshold and Polya-Gamma augmentation entrywise (w then s per response
cell), the logit-scale class profiles and diffusion variances per item
group, the class labels, the branching smoothness c, and the class
probabilities.  A chain is fully determined by its seed.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import dirichlet as _dirichlet
from scipy.stats import gamma as _gamma
from scipy.stats import invgamma as _invgamma

from . import ddt, dists, kernels, lcm
from .ddt import NumericalDegeneracyError
from .tree import Tree, attach_subtree, detach_subtree

__all__ = [
    "Hyperpriors",
    "RunConfig",
    "ChainState",
    "PosteriorDraws",
    "init_state",
    "mh_tree_step",
    "simulate_attach",
    "proposal_log_density",
    "gibbs_w",
    "gibbs_s",
    "gibbs_eta",
    "gibbs_sigma",
    "gibbs_c",
    "sweep",
    "log_joint_state",
    "run_chain",
]

MAX_ATTACH_TRIES = 1000


@dataclass
class Hyperpriors:
    """Prior hyperparameters for (pi, c, sigma^2)."""

    alpha_pi: np.ndarray
    alpha_c: float
    beta_c: float
    alpha_sigma: np.ndarray
    beta_sigma: np.ndarray

    def __post_init__(self):
        self.alpha_pi = np.asarray(self.alpha_pi, dtype=float)
        self.alpha_sigma = np.asarray(self.alpha_sigma, dtype=float)
        self.beta_sigma = np.asarray(self.beta_sigma, dtype=float)
        if (np.any(self.alpha_pi <= 0) or self.alpha_c <= 0 or self.beta_c <= 0
                or np.any(self.alpha_sigma <= 0) or np.any(self.beta_sigma <= 0)):
            raise ValueError("hyperprior parameters must be positive")

    @classmethod
    def default(cls, n_classes, n_groups):
        """Dirichlet(5,...,5), c ~ Gamma(1, 1), sigma_g^2 ~ InverseGamma(2, 2)."""
        return cls(np.full(n_classes, 5.0), 1.0, 1.0,
                   np.full(n_groups, 2.0), np.full(n_groups, 2.0))


@dataclass
class RunConfig:
    """Chain settings; modes follow the model variants under comparison.

    tree_mode 'fixed' keeps the supplied tree (skipping the MH move);
    prior_mode 'independent' replaces the tree covariance by the identity
    and drops the tree block entirely (a plain Bayesian latent class model
    with independent normal priors on the logit profiles).
    """

    k: int
    n_iter: int = 8000
    n_burn: int = 5000
    thin: int = 1
    seed: int = 0
    tree_mode: str = "sample"
    fixed_tree: Tree = None
    variance_mode: str = "group"
    prior_mode: str = "ddt"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one class")
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("burn-in must be shorter than the run")
        if self.thin < 1:
            raise ValueError("thinning interval must be at least 1")
        if self.tree_mode not in ("sample", "fixed"):
            raise ValueError("tree_mode must be 'sample' or 'fixed'")
        if self.variance_mode not in ("group", "homogeneous"):
            raise ValueError("variance_mode must be 'group' or 'homogeneous'")
        if self.prior_mode not in ("ddt", "independent"):
            raise ValueError("prior_mode must be 'ddt' or 'independent'")
        if self.tree_mode == "fixed" and self.prior_mode == "ddt" \
                and self.fixed_tree is None:
            raise ValueError("tree_mode 'fixed' requires fixed_tree")
        if self.fixed_tree is not None and self.fixed_tree.n_leaves != self.k:
            raise ValueError("fixed tree must have k leaves")


@dataclass
class ChainState:
    """One point of the Markov chain, including the augmentation."""

    tree: Tree  # None in prior_mode 'independent'
    eta: np.ndarray  # (K, J) logit-scale class profiles
    c: float
    sigma2: np.ndarray  # (G,)
    z: np.ndarray  # (N,)
    pi: np.ndarray  # (K,)
    w: np.ndarray  # (N, J) latent thresholds, sign-matched to the data
    s: np.ndarray  # (N, J) Polya-Gamma auxiliaries


@dataclass
class PosteriorDraws:
    """Stored post-burn-in, thinned draws of the model blocks.

    The augmentation (w, s) is not retained: it is nuisance state that no
    summary consumes and it dominates memory if kept.
    """

    trees: list
    eta: np.ndarray  # (D, K, J)
    c: np.ndarray  # (D,)
    sigma2: np.ndarray  # (D, G)
    z: np.ndarray  # (D, N)
    pi: np.ndarray  # (D, K)
    log_joint: np.ndarray  # (D,)
    iterations: np.ndarray  # (D,)
    grouping: ddt.ItemGrouping
    config: RunConfig
    tree_accept_rate: float = math.nan

    @property
    def n_draws(self):
        return self.eta.shape[0]

    def theta(self):
        """(D, K, J) response probabilities."""
        return lcm.expit(self.eta)


# ---------------------------------------------------------------------------
# tree Metropolis-Hastings
# ---------------------------------------------------------------------------


def simulate_attach(remainder, c, rng):
    """Divergence location for a fresh particle travelling down the tree.

    Returns (edge_child, time): the particle diverged on the edge above
    `edge_child` at `time`.  Follows the same self-reinforcing dynamics as
    tree generation, with traversal counts given by leaves under each node.
    """
    x = remainder.root
    while True:
        kids = remainder.children(x)
        if len(kids) == 1:
            ch = kids[0]
        else:
            left = remainder.leaves_under(kids[0])
            right = remainder.leaves_under(kids[1])
            ch = kids[0] if rng.random() * (left + right) < left else kids[1]
        m = remainder.leaves_under(ch)
        t = ddt.sample_divergence_time(float(remainder.time[x]), m, c, rng)
        if t < remainder.time[ch]:
            return int(ch), float(t)
        x = ch


def proposal_log_density(remainder, edge_child, t_attach, c):
    """Log-density of `simulate_attach` producing the given location.

    Accumulates, walking from the root: full-branch no-divergence survival
    terms, branch-selection fractions m(child)/m(node) at every two-child
    node passed, the partial survival on the attachment edge, and the
    instantaneous divergence rate a(t)/m(edge) at the attachment time.
    """
    b = int(edge_child)
    if b == remainder.root:
        raise ValueError("attachment edge must lie below the root")
    path = remainder.ancestors(b)[::-1]  # root ... b
    a_node = path[-2]
    if not (remainder.time[a_node] < t_attach < remainder.time[b]):
        raise ValueError(
            f"attach time {t_attach} outside edge "
            f"({remainder.time[a_node]}, {remainder.time[b]})")
    logp = 0.0
    for p, r in zip(path, path[1:]):
        m_r = remainder.leaves_under(r)
        if len(remainder.children(p)) == 2:
            logp += math.log(m_r) - math.log(remainder.leaves_under(p))
        a_lo = float(ddt.cumulative_divergence(float(remainder.time[p]), c))
        if r == b:
            a_hi = float(ddt.cumulative_divergence(t_attach, c))
            logp += -(a_hi - a_lo) / m_r
            logp += float(np.log(ddt.divergence_rate(t_attach, c))) - math.log(m_r)
        else:
            a_hi = float(ddt.cumulative_divergence(float(remainder.time[r]), c))
            logp += -(a_hi - a_lo) / m_r
    return logp


def mh_tree_step(state, grouping, rng, time_constraint="subtree_child"):
    """One detach/reattach Metropolis-Hastings update of (topology, times).

    A non-root node (excluding the root's only child) is chosen uniformly;
    the subtree rooted at its parent is detached, a new attachment point is
    simulated on the remainder by the branching process, and the candidate
    is accepted against the product of the tree density and the leaf-profile
    density, with the simulation density as the proposal on both sides.

    time_constraint 'subtree_child' (default) resamples the attachment until
    it precedes the fragment root's child, the minimal structural
    requirement; because that threshold is invariant across the move, the
    truncation normalizers cancel exactly between the forward and reverse
    directions and the move is exact.  'detach' instead truncates at the
    detached node's original time; that makes node times non-increasing
    across accepted moves, so the chain ratchets toward time zero and fails
    prior-reproduction checks -- it is kept only for comparison.

    Returns (state, accepted).
    """
    tree = state.tree
    if tree.n_leaves < 2:
        raise ValueError("the tree move needs at least two leaves")
    root = tree.root
    root_child = tree.children(root)[0]
    candidates = [u for u in range(tree.n_nodes) if u not in (root, root_child)]
    w_node = candidates[int(rng.integers(len(candidates)))]

    det = detach_subtree(tree, w_node)
    frag, remainder = det.subtree, det.remainder
    frag_child_time = float(frag.time[frag.children(frag.root)[0]])
    threshold = det.detach_time if time_constraint == "detach" else frag_child_time

    for _ in range(MAX_ATTACH_TRIES):
        edge_child, t_new = simulate_attach(remainder, state.c, rng)
        if t_new < threshold:
            break
    else:
        return state, False  # no admissible proposal found; keep the state

    try:
        candidate = attach_subtree(remainder, frag, edge_child, t_new)
        cand_chol = ddt.tree_cholesky(candidate)
    except (NumericalDegeneracyError, ValueError):
        return state, False

    cur = ddt.log_tree_prior(tree, state.c) + ddt.log_marginal_leaf_chol(
        state.eta, ddt.tree_cholesky(tree), state.sigma2, grouping)
    cand = ddt.log_tree_prior(candidate, state.c) + ddt.log_marginal_leaf_chol(
        state.eta, cand_chol, state.sigma2, grouping)
    q_new = proposal_log_density(remainder, edge_child, t_new, state.c)
    q_old = proposal_log_density(remainder, det.edge_child, det.detach_time, state.c)

    log_ratio = (cand + q_old) - (cur + q_new)
    if math.log(1.0 - rng.random()) < log_ratio:
        return replace(state, tree=candidate), True
    return state, False


# ---------------------------------------------------------------------------
# Gibbs conditionals
# ---------------------------------------------------------------------------


def gibbs_w(state, data, rng):
    """Latent thresholds: one-sided truncated normals around eta[z]."""
    loc = state.eta[state.z]
    sd = 1.0 / np.sqrt(state.s)
    draws = kernels.truncated_normal(loc.ravel(), sd.ravel(),
                                     data.y.ravel(), rng)
    return draws.reshape(loc.shape)


def gibbs_s(state, rng):
    """Polya-Gamma auxiliaries: PG(2, w - eta[z]) entrywise."""
    psi = state.w - state.eta[state.z]
    return kernels.polya_gamma(psi.ravel(), rng, 2).reshape(psi.shape)


def _class_weights(state, data):
    """Per-class sums gamma[k,j] = sum_i 1{z=k} s[i,j] and the matching
    s*w sums; the sufficient statistics of the augmented likelihood."""
    k = state.eta.shape[0]
    j = data.j
    gamma = np.zeros((k, j))
    xi = np.zeros((k, j))
    for cls in range(k):
        mask = state.z == cls
        if mask.any():
            gamma[cls] = state.s[mask].sum(axis=0)
            xi[cls] = (state.s[mask] * state.w[mask]).sum(axis=0)
    return gamma, xi


def _prior_row_precision(state, data, chol):
    """Sigma^{-1} for the active prior (identity when independent)."""
    k = state.eta.shape[0]
    if chol is None:
        return np.eye(k)
    identity = np.eye(k)
    inv = solve_triangular(chol, identity, lower=True)
    return inv.T @ inv


def gibbs_eta(state, data, rng, chol=None, sigma_inv=None):
    """Class profiles: per item, a K-variate Gaussian with precision
    diag(gamma[:, j]) + Sigma^{-1}/sigma_g^2 and linear term xi[:, j].

    Items are conditionally independent given the augmentation, so the
    joint per-group draw factorizes column by column; columns are batched
    per group.
    """
    k, j = state.eta.shape
    if sigma_inv is None:
        sigma_inv = _prior_row_precision(state, data, chol)
    gamma, xi = _class_weights(state, data)
    eta = np.empty_like(state.eta)
    idx = np.arange(k)
    for g, cols in enumerate(data.grouping.slices()):
        j_g = cols.stop - cols.start
        prec = np.broadcast_to(sigma_inv / state.sigma2[g], (j_g, k, k)).copy()
        prec[:, idx, idx] += gamma[:, cols].T
        chol_q = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, xi[:, cols].T[..., None])[..., 0]
        noise = np.linalg.solve(np.swapaxes(chol_q, 1, 2),
                                rng.standard_normal((j_g, k))[..., None])[..., 0]
        eta[:, cols] = (mean + noise).T
    return eta


def gibbs_sigma(state, data, hyper, rng, chol=None, variance_mode="group"):
    """Diffusion variances: conjugate inverse-gamma updates per group.

    The quadratic statistic per group is trace(eta_g' Sigma^{-1} eta_g).
    Homogeneous mode pools every group into a single update (J replaces
    J_g, statistics summed) using the first group's hyperparameters.
    """
    k, j = state.eta.shape
    if chol is None:
        white = state.eta
    else:
        white = solve_triangular(chol, state.eta, lower=True)
    quad_cols = (white ** 2).sum(axis=0)
    slices = data.grouping.slices()
    if variance_mode == "homogeneous":
        s_all = quad_cols.sum()
        draw = dists.sample_invgamma(j * k / 2.0 + hyper.alpha_sigma[0],
                                     hyper.beta_sigma[0] + s_all / 2.0, rng)
        return np.full(len(slices), draw)
    out = np.empty(len(slices))
    for g, cols in enumerate(slices):
        j_g = cols.stop - cols.start
        s_g = quad_cols[cols].sum()
        out[g] = dists.sample_invgamma(j_g * k / 2.0 + hyper.alpha_sigma[g],
                                       hyper.beta_sigma[g] + s_g / 2.0, rng)
    return out


def gibbs_c(state, hyper, rng):
    """Branching smoothness: gamma-conjugate update from branch times.

    Shape grows by one per internal node; the rate accumulates
    -J_v log(1 - t_v) over internal nodes, with J_v the harmonic-number
    combination also used by the tree density.
    """
    tree = state.tree
    h = ddt.harmonic_numbers(2 * tree.n_leaves)
    shape = hyper.alpha_c
    rate = hyper.beta_c
    for v in range(tree.n_nodes):
        if v == tree.root or tree.is_leaf(v):
            continue
        kids = tree.children(v)
        l = tree.leaves_under(kids[0])
        r = tree.leaves_under(kids[1])
        t_v = float(tree.time[v])
        if t_v >= 1.0:
            raise ValueError("internal node at time 1 leaves c non-identifiable")
        j_v = h[l + r - 1] - h[l - 1] - h[r - 1]
        shape += 1.0
        rate -= j_v * math.log(max(1.0 - t_v, ddt.TIME_FLOOR))
    return float(dists.sample_gamma(shape, rate, rng))


# ---------------------------------------------------------------------------
# full sweep and chain driver
# ---------------------------------------------------------------------------


def init_state(data, hyper, config, rng):
    """Deterministic-given-seed initialization.

    The tree starts at a prior draw (c at its prior mean) unless fixed; the
    profiles start at the logit of empirical item frequencies with small
    per-class jitter; labels come from a short Hamming-distance k-means
    pass over the response rows; the augmentation is imputed exactly from
    its sign-consistent conditionals.
    """
    k, grouping = config.k, data.grouping
    g = grouping.n_groups
    c0 = hyper.alpha_c / hyper.beta_c
    sigma0 = np.where(hyper.alpha_sigma > 1,
                      hyper.beta_sigma / (hyper.alpha_sigma - 1.0), 1.0)

    if config.prior_mode == "independent":
        tree = None
        c0 = math.nan
    elif config.tree_mode == "fixed":
        tree = config.fixed_tree
    else:
        tree = ddt.sample_tree(k, c0, rng)

    freq = np.clip(data.y.mean(axis=0) if data.n else np.full(data.j, 0.5),
                   1e-3, 1.0 - 1e-3)
    eta = np.tile(lcm.logit(freq), (k, 1)) + 0.1 * rng.standard_normal((k, data.j))

    z = _hamming_kmeans(data.y, k, rng)
    pi = lcm.sample_pi(z, hyper.alpha_pi, k, rng)

    loc = eta[z]
    w = dists.truncated_logistic(loc, data.y.astype(bool), rng)
    s = dists.sample_pg(2, (w - loc).ravel(), rng).reshape(loc.shape)
    return ChainState(tree=tree, eta=eta, c=c0, sigma2=sigma0.astype(float),
                      z=z, pi=pi, w=w, s=s)


def _hamming_kmeans(y, k, rng, n_pass=5):
    n = y.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    centers = y[rng.choice(n, size=min(k, n), replace=False)].astype(float)
    if centers.shape[0] < k:  # fewer subjects than classes
        centers = np.vstack([centers,
                             rng.random((k - centers.shape[0], y.shape[1]))])
    z = np.zeros(n, dtype=np.int64)
    for _ in range(n_pass):
        dist = np.abs(y[:, None, :] - centers[None, :, :]).sum(axis=2)
        z = dist.argmin(axis=1)
        for cls in range(k):
            mask = z == cls
            if mask.any():
                centers[cls] = y[mask].mean(axis=0)
            else:
                centers[cls] = y[int(rng.integers(n))]
    return z


def sweep(state, data, hyper, config, rng, chol=None):
    """One full iteration; returns (state, chol, tree_accepted).

    `chol` carries the Cholesky factor of the current tree covariance
    between iterations (None means the identity prior); it is refreshed
    whenever a tree move is accepted.
    """
    accepted = False
    if config.prior_mode == "ddt":
        if config.tree_mode == "sample" and config.k >= 2:
            state, accepted = mh_tree_step(state, data.grouping, rng)
            if accepted or chol is None:
                chol = ddt.tree_cholesky(state.tree)
        elif chol is None:
            chol = ddt.tree_cholesky(state.tree)

    loc = state.eta[state.z]
    kernels.augmented_sweep(data.y, loc, state.w, state.s, rng)

    sigma_inv = _prior_row_precision(state, data, chol)
    eta = gibbs_eta(state, data, rng, sigma_inv=sigma_inv)
    state = replace(state, eta=eta)
    sigma2 = gibbs_sigma(state, data, hyper, rng, chol=chol,
                         variance_mode=config.variance_mode)
    state = replace(state, sigma2=sigma2)

    theta = lcm.expit(state.eta)
    z = lcm.sample_z(data.y, theta, state.pi, rng)
    state = replace(state, z=z)

    if config.prior_mode == "ddt":
        state = replace(state, c=gibbs_c(state, hyper, rng))

    pi = lcm.sample_pi(state.z, hyper.alpha_pi, config.k, rng)
    state = replace(state, pi=pi)
    return state, chol, accepted


def log_joint_state(state, data, hyper, config, chol=None):
    """Unnormalized log posterior density at one chain state.

    Sums the tree density, the marginalized leaf-profile density, the
    label and response likelihoods, and the (c, sigma^2, pi) priors; the
    tree and c blocks are dropped under the independent prior.
    """
    grouping = data.grouping
    total = 0.0
    if config.prior_mode == "ddt":
        if chol is None:
            chol = ddt.tree_cholesky(state.tree)
        total += ddt.log_tree_prior(state.tree, state.c)
        total += ddt.log_marginal_leaf_chol(state.eta, chol, state.sigma2, grouping)
        total += float(_gamma.logpdf(state.c, hyper.alpha_c,
                                     scale=1.0 / hyper.beta_c))
    else:
        eye = np.eye(state.eta.shape[0])
        total += ddt.log_marginal_leaf_chol(state.eta, eye, state.sigma2, grouping)

    theta = lcm.expit(state.eta)
    ll = lcm.class_loglik_matrix(data.y, theta)
    total += float(ll[np.arange(data.n), state.z].sum())
    total += float(np.log(state.pi[state.z]).sum())

    if config.variance_mode == "homogeneous":
        total += float(_invgamma.logpdf(state.sigma2[0], hyper.alpha_sigma[0],
                                        scale=hyper.beta_sigma[0]))
    else:
        total += float(_invgamma.logpdf(state.sigma2, hyper.alpha_sigma,
                                        scale=hyper.beta_sigma).sum())
    total += float(_dirichlet.logpdf(_simplex_interior(state.pi), hyper.alpha_pi))
    return total


def _simplex_interior(pi, eps=1e-12):
    pi = np.clip(np.asarray(pi, dtype=float), eps, None)
    return pi / pi.sum()


def run_chain(data, hyper, config):
    """Run one chain and collect post-burn-in, thinned draws.

    Deterministic given config.seed: reruns produce bit-identical draws.
    Numerical failures are annotated with the iteration index.
    """
    if data.n == 0:
        raise ValueError("cannot fit an empty dataset")
    rng = np.random.default_rng(config.seed)
    state = init_state(data, hyper, config, rng)
    chol = None

    kept = []
    accepts = 0
    tree_steps = 0
    for it in range(config.n_iter):
        try:
            state, chol, accepted = sweep(state, data, hyper, config, rng, chol)
        except NumericalDegeneracyError as exc:
            raise NumericalDegeneracyError(
                f"iteration {it}: {exc}", tree=exc.tree) from exc
        if config.prior_mode == "ddt" and config.tree_mode == "sample" \
                and config.k >= 2:
            tree_steps += 1
            accepts += int(accepted)
        if it >= config.n_burn and (it - config.n_burn) % config.thin == 0:
            kept.append((it, state, log_joint_state(state, data, hyper, config,
                                                    chol=chol)))

    iterations = np.array([it for it, _, _ in kept], dtype=np.int64)
    states = [s for _, s, _ in kept]
    return PosteriorDraws(
        trees=[s.tree.copy() if s.tree is not None else None for s in states],
        eta=np.stack([s.eta for s in states]),
        c=np.array([s.c for s in states]),
        sigma2=np.stack([s.sigma2 for s in states]),
        z=np.stack([s.z for s in states]).astype(np.int64),
        pi=np.stack([s.pi for s in states]),
        log_joint=np.array([lj for _, _, lj in kept]),
        iterations=iterations,
        grouping=data.grouping,
        config=config,
        tree_accept_rate=accepts / tree_steps if tree_steps else math.nan,
    )
