"""Improper rooted binary trees over labelled leaves.

An improper rooted binary tree has a root with exactly one child, internal
nodes with exactly two children, and leaves with none; a tree over K leaves
therefore has 2K nodes.  Every node carries a divergence time in [0, 1]
that strictly increases away from the root (root at 0, leaves at 1), and
each leaf carries a stable class label.

The induced K x K covariance puts time(MRCA(leaf_k, leaf_l)) off-diagonal
and 1 on the diagonal; it is symmetric, strictly ultrametric, and positive
definite for every valid tree.
"""

import json
from typing import NamedTuple

import numpy as np

__all__ = [
    "Tree",
    "TreeError",
    "Detachment",
    "tree_covariance",
    "cophenetic_distance",
    "frobenius_distance",
    "is_strictly_ultrametric",
    "detach_subtree",
    "attach_subtree",
    "tree_equal",
    "covariance_to_json",
]


class TreeError(ValueError):
    """Structural or parse failure for tree values."""


class Tree:
    """Node-table representation: parallel arrays indexed by node id.

    parent[u] is -1 for the root; leaf_label[u] is -1 for non-leaves.
    Leaf labels are distinct non-negative class indices; a standalone tree
    over K leaves carries exactly 0..K-1, while remainder trees produced by
    subtree surgery keep their original (possibly gappy) labels so that
    class-profile rows stay aligned.  Instances are treated as immutable
    after construction; mutation always builds a new tree.
    """

    __slots__ = ("parent", "time", "leaf_label", "_children", "_cov", "_leaf_nodes")

    def __init__(self, parent, time, leaf_label, validate=True):
        self.parent = np.asarray(parent, dtype=np.int64)
        self.time = np.asarray(time, dtype=np.float64)
        self.leaf_label = np.asarray(leaf_label, dtype=np.int64)
        self._children = None
        self._cov = None
        self._leaf_nodes = None
        if validate:
            self.validate()

    # -- basic structure -------------------------------------------------

    @property
    def n_nodes(self):
        return self.parent.shape[0]

    @property
    def n_leaves(self):
        return int((self.leaf_label >= 0).sum())

    @property
    def root(self):
        roots = np.nonzero(self.parent < 0)[0]
        if roots.size != 1:
            raise TreeError(f"expected exactly one root, found {roots.size}")
        return int(roots[0])

    def children(self, u):
        return self.children_table()[u]

    def children_table(self):
        if self._children is None:
            table = [[] for _ in range(self.n_nodes)]
            for v, p in enumerate(self.parent):
                if p >= 0:
                    table[p].append(v)
            self._children = [tuple(c) for c in table]
        return self._children

    def is_leaf(self, u):
        return self.leaf_label[u] >= 0

    def leaf_nodes(self):
        """Node index of each leaf, ordered by class label."""
        if self._leaf_nodes is None:
            nodes = np.nonzero(self.leaf_label >= 0)[0]
            self._leaf_nodes = nodes[np.argsort(self.leaf_label[nodes])]
        return self._leaf_nodes

    @property
    def first_divergence_time(self):
        """Time of the root's only child (the earliest branch point)."""
        return float(self.time[self.children(self.root)[0]])

    def copy(self):
        return Tree(self.parent.copy(), self.time.copy(), self.leaf_label.copy(),
                    validate=False)

    def validate(self):
        """Check all structural invariants; raises TreeError on failure."""
        n = self.n_nodes
        k = self.n_leaves
        if n != 2 * k:
            raise TreeError(f"{k} leaves require {2 * k} nodes, found {n}")
        if not (self.parent.shape == self.time.shape == self.leaf_label.shape):
            raise TreeError("node table arrays must share a length")
        root = self.root
        if self.time[root] != 0.0:
            raise TreeError("root must sit at time 0")
        labels = self.leaf_label[self.leaf_label >= 0]
        if len(set(labels.tolist())) != k:
            raise TreeError("leaf labels must be distinct")
        table = self.children_table()
        for u in range(n):
            deg = len(table[u])
            if u == root:
                if deg != 1:
                    raise TreeError("root must have exactly one child")
            elif self.is_leaf(u):
                if deg != 0:
                    raise TreeError(f"leaf {u} has children")
                if self.time[u] != 1.0:
                    raise TreeError(f"leaf {u} not at time 1")
            elif deg != 2:
                raise TreeError(f"internal node {u} has {deg} children")
            p = self.parent[u]
            if p >= 0:
                if p >= n:
                    raise TreeError(f"parent index {p} out of range")
                if not self.time[p] < self.time[u]:
                    raise TreeError(
                        f"time must increase from parent: node {u} at "
                        f"{self.time[u]} under {p} at {self.time[p]}")
        for u in range(n):
            steps, v = 0, u
            while self.parent[v] >= 0:
                v = int(self.parent[v])
                steps += 1
                if steps > n:
                    raise TreeError("parent pointers contain a cycle")
        return self

    # -- queries ----------------------------------------------------------

    def ancestors(self, u):
        """Ancestor node ids of u, inclusive, root last."""
        out = [u]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def mrca(self, u, v):
        """Most recent common ancestor; mrca(u, u) == u."""
        n = self.n_nodes
        if not (0 <= u < n and 0 <= v < n):
            raise TreeError(f"node index out of range: {u}, {v}")
        seen = set(self.ancestors(u))
        x = v
        while x not in seen:
            x = int(self.parent[x])
        return x

    def subtree_nodes(self, u):
        """Node ids of the subtree rooted at u (inclusive), preorder."""
        out, stack = [], [u]
        table = self.children_table()
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(table[x])
        return out

    def leaves_under(self, u):
        return sum(1 for x in self.subtree_nodes(u) if self.is_leaf(x))

    def covariance(self):
        """K x K matrix with time(MRCA) off-diagonal and unit diagonal.

        Cached on first use; the returned array is marked read-only.
        """
        if self._cov is not None:
            return self._cov
        k = self.n_leaves
        leaves = self.leaf_nodes()
        sigma = np.ones((k, k))
        for a in range(k):
            for b in range(a + 1, k):
                t = self.time[self.mrca(int(leaves[a]), int(leaves[b]))]
                sigma[a, b] = sigma[b, a] = t
        sigma.flags.writeable = False
        self._cov = sigma
        return sigma

    # -- Newick serialization ---------------------------------------------

    def to_newick(self):
        """Newick text with branch lengths; leaves named v1..vK (label+1).

        Branch lengths are adjusted by ulps where needed so that a decoder
        accumulating them from the root reproduces every node time
        bit-exactly.
        """
        table = self.children_table()

        def branch(value, acc):
            d = value - acc
            for _ in range(64):
                if acc + d == value:
                    return d
                d = np.nextafter(d, np.inf if acc + d < value else -np.inf)
            raise TreeError("could not serialize a branch length exactly")

        def min_label(u):
            return min(self.leaf_label[x] for x in self.subtree_nodes(u)
                       if self.is_leaf(x))

        def render(u, acc):
            t = float(self.time[u])
            d = float(branch(t, acc))
            if self.is_leaf(u):
                return f"v{self.leaf_label[u] + 1}:{d!r}"
            kids = sorted(table[u], key=min_label)
            inner = ",".join(render(c, acc + d) for c in kids)
            return f"({inner}):{d!r}"

        return f"({render(table[self.root][0], 0.0)});"

    @classmethod
    def from_newick(cls, text):
        """Parse Newick text with branch lengths and leaf names v1..vK."""
        s = text.strip()
        pos = 0

        def fail(msg):
            raise TreeError(f"newick parse error at position {pos}: {msg}")

        def expect(ch):
            nonlocal pos
            if pos >= len(s) or s[pos] != ch:
                fail(f"expected {ch!r}")
            pos += 1

        parents, lengths, labels = [], [], []

        def new_node(parent, label):
            parents.append(parent)
            lengths.append(0.0)
            labels.append(label)
            return len(parents) - 1

        def parse_length():
            nonlocal pos
            expect(":")
            start = pos
            while pos < len(s) and (s[pos].isdigit() or s[pos] in ".eE+-"):
                pos += 1
            if start == pos:
                fail("expected a branch length")
            try:
                return float(s[start:pos])
            except ValueError:
                fail(f"bad branch length {s[start:pos]!r}")

        def parse_node(parent):
            nonlocal pos
            if pos >= len(s):
                fail("unexpected end of input")
            if s[pos] == "(":
                expect("(")
                node = new_node(parent, -1)
                parse_node(node)
                expect(",")
                parse_node(node)
                expect(")")
                lengths[node] = parse_length()
                return node
            start = pos
            while pos < len(s) and s[pos] not in ":,();":
                pos += 1
            name = s[start:pos]
            if not (len(name) > 1 and name[0] == "v" and name[1:].isdigit()):
                fail(f"leaf names must look like v<k>, got {name!r}")
            node = new_node(parent, int(name[1:]) - 1)
            lengths[node] = parse_length()
            return node

        expect("(")
        root = new_node(-1, -1)
        parse_node(root)
        expect(")")
        expect(";")
        if pos != len(s):
            fail("trailing characters after ';'")

        # accumulate branch lengths into absolute times, root downward
        kids = [[] for _ in parents]
        for v, p in enumerate(parents):
            if p >= 0:
                kids[p].append(v)
        times = [0.0] * len(parents)
        order = list(kids[root])
        i = 0
        while i < len(order):
            u = order[i]
            i += 1
            times[u] = times[parents[u]] + lengths[u]
            order.extend(kids[u])

        tree = cls(np.array(parents), np.array(times), np.array(labels),
                   validate=False)
        leaf_mask = tree.leaf_label >= 0
        if np.any(np.abs(tree.time[leaf_mask] - 1.0) > 1e-9):
            raise TreeError("leaf branch lengths must accumulate to time 1")
        tree.time[leaf_mask] = 1.0
        k = tree.n_leaves
        found = sorted(tree.leaf_label[leaf_mask].tolist())
        if found != list(range(k)):
            raise TreeError(f"expected leaf names v1..v{k}, found {found}")
        return tree.validate()

    def __repr__(self):
        return f"Tree(n_leaves={self.n_leaves})"


class Detachment(NamedTuple):
    """Result of cutting a subtree out of a tree.

    subtree: fragment rooted at the detached node's parent (single child);
        not a valid standalone tree (its root time is nonzero).
    remainder: valid tree over the remaining leaves, original labels kept.
    edge_child: node id in `remainder` below the original attachment edge.
    detach_time: original divergence time of the fragment root.
    """

    subtree: Tree
    remainder: Tree
    edge_child: int
    detach_time: float


def _extract(tree, nodes):
    """Tree restricted to `nodes` (new indices follow list order)."""
    index = {old: new for new, old in enumerate(nodes)}
    parent = np.empty(len(nodes), dtype=np.int64)
    for old in nodes:
        p = int(tree.parent[old])
        parent[index[old]] = index.get(p, -1)
    sub = Tree(parent, tree.time[nodes].copy(), tree.leaf_label[nodes].copy(),
               validate=False)
    return sub, index


def detach_subtree(tree, w):
    """Cut out the subtree rooted at pa(w) containing w and its descendants.

    The remainder splices pa(w)'s other child onto pa(w)'s parent, keeping
    every surviving divergence time and leaf label.  w must be neither the
    root nor the root's only child, so the remainder stays a valid tree.
    """
    root = tree.root
    w = int(w)
    if w == root:
        raise TreeError("cannot detach the root")
    u = int(tree.parent[w])
    if u == root:
        raise TreeError("cannot detach the root's only child")
    frag_nodes = [u] + tree.subtree_nodes(w)
    frag, _ = _extract(tree, frag_nodes)

    in_frag = set(frag_nodes)
    rem_nodes = [x for x in range(tree.n_nodes) if x not in in_frag]
    kids_u = tree.children(u)
    sib = kids_u[0] if kids_u[1] == w else kids_u[1]
    remainder, index = _extract(tree, rem_nodes)
    remainder.parent[index[sib]] = index[int(tree.parent[u])]
    remainder.validate()
    return Detachment(frag, remainder, index[sib], float(tree.time[u]))


def attach_subtree(remainder, subtree, edge_child, t_new):
    """Insert a detached fragment onto an edge of the remainder.

    The fragment root lands on the edge above `edge_child` at time t_new,
    which must lie strictly between the edge endpoint times and strictly
    before the fragment root's child time.
    """
    b = int(edge_child)
    if b == remainder.root:
        raise TreeError("attachment edge must lie below the root")
    a = int(remainder.parent[b])
    frag_root = subtree.root
    child_time = float(subtree.time[subtree.children(frag_root)[0]])
    if not (remainder.time[a] < t_new < remainder.time[b]):
        raise TreeError(
            f"attach time {t_new} outside edge interval "
            f"({remainder.time[a]}, {remainder.time[b]})")
    if not t_new < child_time:
        raise TreeError(f"attach time {t_new} not before subtree child at {child_time}")

    n_rem = remainder.n_nodes
    parent = np.concatenate([remainder.parent,
                             np.where(subtree.parent >= 0, subtree.parent + n_rem, -1)])
    time = np.concatenate([remainder.time, subtree.time])
    leaf_label = np.concatenate([remainder.leaf_label, subtree.leaf_label])
    u = frag_root + n_rem
    parent[u] = a
    parent[b] = u
    time[u] = t_new
    return Tree(parent, time, leaf_label)


def tree_covariance(tree):
    """Covariance induced by a tree; see Tree.covariance."""
    return tree.covariance()


def cophenetic_distance(sigma, k, l):
    """Tree distance between leaves k and l: one minus their covariance."""
    sigma = np.asarray(sigma)
    dim = sigma.shape[0]
    if not (0 <= k < dim and 0 <= l < dim):
        raise IndexError(f"class index out of range for {dim}x{dim} covariance")
    return 1.0 - float(sigma[k, l])


def frobenius_distance(a, b):
    """Entrywise L2 distance between two covariance matrices."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def is_strictly_ultrametric(sigma, tol=1e-10):
    """Three-point condition with unit diagonal, up to an absolute tolerance."""
    sigma = np.asarray(sigma, dtype=float)
    k = sigma.shape[0]
    if not np.allclose(sigma, sigma.T, atol=tol):
        return False
    if not np.allclose(np.diag(sigma), 1.0, atol=tol):
        return False
    if k > 1:
        off = sigma[~np.eye(k, dtype=bool)]
        if off.min() <= 0.0 or off.max() >= 1.0:
            return False
    for m in range(k):
        pair_min = np.minimum.outer(sigma[:, m], sigma[m, :])
        if np.any(sigma < pair_min - tol):
            return False
    return True


def tree_equal(a, b, time_tol=0.0):
    """Equality up to node renumbering and child order."""

    def key(tree, u):
        if tree.is_leaf(u):
            return (0, int(tree.leaf_label[u]))
        t = float(tree.time[u])
        if time_tol:
            t = round(t / time_tol) * time_tol
        kids = sorted(key(tree, c) for c in tree.children(u))
        return (1, t, tuple(kids))

    if a.n_leaves != b.n_leaves:
        return False
    return key(a, a.root) == key(b, b.root)


def covariance_to_json(sigma):
    """Nested-array JSON text for a covariance matrix."""
    return json.dumps(np.asarray(sigma, dtype=float).tolist())
