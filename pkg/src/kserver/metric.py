"""Finite metrics, rooted weighted trees, tau-HSTs and FRT-style tree embeddings.

Nodes of a :class:`WeightedTree` are the integers ``0..N-1``. Edge weights are
stored as :class:`fractions.Fraction` so that every distance computed on a tree
is exact.
"""

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from typing import NamedTuple, Sequence

from .bits import BitStream
from .errors import (
    InvalidMetric,
    InvalidTree,
    RatioViolation,
    SizeMismatch,
    UnequalLeafDepth,
    UnknownLeaf,
)


def _frac(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, str):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**12)
    return Fraction(v)


class MetricSpace:
    """Finite metric with integral distances.

    Parameters
    ----------
    dist : sequence of sequences of int
        Symmetric distance matrix, zero exactly on the diagonal.
    """

    def __init__(self, dist):
        rows = [list(r) for r in dist]
        n = len(rows)
        for r in rows:
            if len(r) != n:
                raise InvalidMetric("distance matrix is not square")
        for i in range(n):
            for j in range(n):
                d = rows[i][j]
                if int(d) != d:
                    raise InvalidMetric(f"distance ({i},{j}) is not integral")
                if (i == j) != (d == 0) or d < 0:
                    raise InvalidMetric(f"distance ({i},{j}) = {d} is invalid")
                if rows[j][i] != d:
                    raise InvalidMetric(f"distance ({i},{j}) is not symmetric")
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    if rows[a][c] > rows[a][b] + rows[b][c]:
                        raise InvalidMetric(f"triangle inequality fails on ({a},{b},{c})")
        self.dist = tuple(tuple(int(d) for d in r) for r in rows)
        self.n = n
        self.diameter = max((max(r) for r in self.dist), default=0)

    def __call__(self, a, b):
        return self.dist[a][b]

    def to_json(self):
        return json.dumps({"n": self.n, "dist": [list(r) for r in self.dist]}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text)["dist"])

    @classmethod
    def uniform(cls, n, d=1):
        return cls([[0 if i == j else d for j in range(n)] for i in range(n)])

    @classmethod
    def line(cls, n):
        return cls([[abs(i - j) for j in range(n)] for i in range(n)])

    def __repr__(self):
        return f"MetricSpace(n={self.n}, D={self.diameter})"


class WeightedTree:
    """Rooted edge-weighted tree whose leaves are the points of a metric.

    ``parent[u]`` is ``None`` for the root; ``weight[u]`` is the weight of the
    edge between ``u`` and its parent (ignored for the root).
    """

    def __init__(self, parent: Sequence, weight: Sequence):
        if len(parent) != len(weight) or not parent:
            raise InvalidTree("parent and weight arrays must be non-empty and aligned")
        N = len(parent)
        roots = [u for u, p in enumerate(parent) if p is None or p == -1]
        if len(roots) != 1:
            raise InvalidTree(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.parent = tuple(None if (p is None or p == -1) else int(p) for p in parent)
        w = [_frac(x) for x in weight]
        w[self.root] = Fraction(0)
        children = [[] for _ in range(N)]
        for u, p in enumerate(self.parent):
            if p is None:
                continue
            if not 0 <= p < N or p == u:
                raise InvalidTree(f"node {u} has invalid parent {p}")
            children[p].append(u)
        self.children = tuple(tuple(c) for c in children)
        for u in range(N):
            if u != self.root and w[u] < 0:
                raise InvalidTree(f"negative weight on edge above {u}")
            if u != self.root and w[u] == 0 and children[u]:
                raise InvalidTree(f"zero weight allowed only on leaf edges (node {u})")
        self.weight = tuple(w)
        self.n_nodes = N

        # BFS from the root doubles as the acyclicity/reachability check
        order, depth = [], [0] * N
        seen = [False] * N
        q = deque([self.root])
        seen[self.root] = True
        while q:
            u = q.popleft()
            order.append(u)
            for c in self.children[u]:
                if seen[c]:
                    raise InvalidTree("cycle detected")
                seen[c] = True
                depth[c] = depth[u] + 1
                q.append(c)
        if len(order) != N:
            raise InvalidTree("parent map does not reach the root from every node")
        self.bfs = tuple(order)
        self.depth = tuple(depth)

        height = [Fraction(0)] * N
        for u in order[1:]:
            height[u] = height[self.parent[u]] + self.weight[u]
        self.height = tuple(height)

        # DFS preorder keeps every L_u contiguous in the leaf order
        pre, stack = [], [self.root]
        while stack:
            u = stack.pop()
            pre.append(u)
            stack.extend(reversed(self.children[u]))
        self.preorder = tuple(pre)
        self.postorder = tuple(reversed(pre))
        self.leaves = tuple(u for u in pre if not self.children[u])
        self.leaf_pos = {l: i for i, l in enumerate(self.leaves)}
        lo, hi = [0] * N, [0] * N
        for u in self.postorder:
            if not self.children[u]:
                lo[u] = self.leaf_pos[u]
                hi[u] = lo[u] + 1
            else:
                lo[u] = min(lo[c] for c in self.children[u])
                hi[u] = max(hi[c] for c in self.children[u])
        self._lo, self._hi = tuple(lo), tuple(hi)
        self.n_leaves_below = tuple(hi[u] - lo[u] for u in range(N))

    # -- structure -----------------------------------------------------------
    @property
    def n(self):
        """Number of leaves (points of the induced metric)."""
        return len(self.leaves)

    def is_leaf(self, u):
        return not self.children[u]

    def subtree_leaves(self, u):
        return self.leaves[self._lo[u]:self._hi[u]]

    def in_subtree(self, leaf, u):
        """True when ``leaf`` lies in ``L_u``."""
        return self._lo[u] <= self.leaf_pos[leaf] < self._hi[u]

    def is_ancestor(self, a, b):
        """True when ``a`` is an ancestor of ``b`` (or ``a == b``)."""
        while b is not None and self.depth[b] >= self.depth[a]:
            if b == a:
                return True
            b = self.parent[b]
        return False

    def lca(self, a, b):
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
        while a != b:
            a, b = self.parent[a], self.parent[b]
        return a

    def path_up(self, u, top):
        """Nodes from ``u`` (inclusive) up to ``top`` (exclusive)."""
        out = []
        while u != top:
            out.append(u)
            u = self.parent[u]
        return out

    def node_distance(self, a, b):
        c = self.lca(a, b)
        return self.height[a] + self.height[b] - 2 * self.height[c]

    @cached_property
    def diameter(self):
        leaves = self.leaves
        best = Fraction(0)
        for i, a in enumerate(leaves):
            for b in leaves[i + 1:]:
                best = max(best, self.node_distance(a, b))
        return best

    def counts(self, config):
        """``n_u(C)`` for every node: number of servers of ``config`` below ``u``."""
        cnt = [0] * self.n_nodes
        for leaf in config:
            u = leaf
            while u is not None:
                cnt[u] += 1
                u = self.parent[u]
        return cnt

    # -- serialization ---------------------------------------------------------
    def to_dict(self):
        nodes = [
            {"id": u, "parent": self.parent[u], "weight": str(self.weight[u])}
            for u in range(self.n_nodes)
        ]
        return {"nodes": nodes, "leaves": list(self.leaves)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        nodes = sorted(d["nodes"], key=lambda e: e["id"])
        ids = [e["id"] for e in nodes]
        if ids != list(range(len(ids))):
            raise InvalidTree("node ids must be 0..N-1")
        tree = cls([e["parent"] for e in nodes], [e["weight"] for e in nodes])
        if "leaves" in d and sorted(d["leaves"]) != sorted(tree.leaves):
            raise InvalidTree("declared leaves differ from childless nodes")
        return tree

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    # -- constructors ----------------------------------------------------------
    @classmethod
    def star(cls, n, weight=1):
        return cls([None] + [0] * n, [0] + [weight] * n)

    @classmethod
    def path(cls, n, weight=1):
        """Chain ``0 - 1 - ... - n-1`` rooted at ``0``."""
        return cls([None] + list(range(n - 1)), [0] + [weight] * (n - 1))

    @classmethod
    def uniform_hst(cls, branching: Sequence[int], tau, leaf_weight=1):
        """Complete HST; ``branching[i]`` children per node at depth ``i``."""
        tau = _frac(tau)
        depth = len(branching)
        parent, weight = [None], [0]
        frontier = [0]
        for level, b in enumerate(branching):
            w = _frac(leaf_weight) * tau ** (depth - 1 - level)
            nxt = []
            for u in frontier:
                for _ in range(b):
                    parent.append(u)
                    weight.append(w)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        return cls(parent, weight)

    def __repr__(self):
        return f"WeightedTree(nodes={self.n_nodes}, leaves={self.n})"


@dataclass(frozen=True)
class TauHST:
    tree: WeightedTree
    tau: Fraction


def validate_hst(tree: WeightedTree, tau) -> TauHST:
    """Check the tau-HST conditions and wrap the tree.

    Raises :class:`RatioViolation` on the first edge with ``w_u != tau * w_v``
    and :class:`UnequalLeafDepth` when two leaves sit at different depths.
    """
    tau = _frac(tau)
    if tau < 1:
        raise ValueError("tau must be at least 1")
    for u in tree.bfs:
        if u == tree.root:
            continue
        for v in tree.children[u]:
            if tree.weight[u] != tau * tree.weight[v]:
                raise RatioViolation(u, v)
    first = tree.leaves[0]
    for leaf in tree.leaves[1:]:
        if tree.depth[leaf] != tree.depth[first]:
            raise UnequalLeafDepth(first, leaf)
    return TauHST(tree, tau)


def _check_leaf(tree, leaf):
    if leaf not in tree.leaf_pos:
        raise UnknownLeaf(f"{leaf} is not a leaf")


def leaf_distance(tree: WeightedTree, a, b) -> Fraction:
    _check_leaf(tree, a)
    _check_leaf(tree, b)
    return tree.node_distance(a, b)


def config_distance(tree: WeightedTree, C, C2) -> Fraction:
    """Min-weight perfect matching distance between two server multisets.

    On a tree this equals ``sum_u w_u |n_u(C) - n_u(C')|``.
    """
    if len(C) != len(C2):
        raise SizeMismatch(f"configurations of sizes {len(C)} and {len(C2)}")
    for leaf in list(C) + list(C2):
        _check_leaf(tree, leaf)
    a, b = tree.counts(C), tree.counts(C2)
    w = tree.weight
    return sum((w[u] * abs(a[u] - b[u]) for u in range(tree.n_nodes) if u != tree.root), Fraction(0))


class Embedding(NamedTuple):
    hst: TauHST
    leaf_of: tuple  # point -> leaf node
    point_of: dict  # leaf node -> point
    bits_used: int


BETA_BITS = 10


def frt_embed(metric: MetricSpace, tau=16, bits: BitStream | None = None) -> Embedding:
    """Random hierarchical decomposition of ``metric`` into a tau-HST.

    A random permutation of the points and a random scale ``beta`` in
    ``[1, tau)`` (log-uniform, quantized to ``BETA_BITS`` bits) drive the
    partition: level-``j`` clusters are carved out of balls of radius
    ``beta * tau**(j-1)`` around the points taken in permutation order. The
    edge from a level-``j`` cluster to its parent weighs ``beta * tau**j``,
    which makes every tree distance at least the metric distance.
    """
    tau = _frac(tau)
    if tau < 10:
        raise ValueError("embedding base must satisfy tau >= 10")
    bits = bits if bits is not None else BitStream(0)
    start = bits.used
    n = metric.n
    if n == 0:
        raise InvalidMetric("empty metric")
    if n == 1:
        tree = WeightedTree([None], [0])
        return Embedding(TauHST(tree, tau), (0,), {0: 0}, 0)

    perm = bits.permutation(n)
    u = bits.bits(BETA_BITS) / 2**BETA_BITS
    beta = Fraction(float(tau) ** u).limit_denominator(2**BETA_BITS)
    beta = min(max(beta, Fraction(1)), tau - Fraction(1, 2**BETA_BITS))

    D = metric.diameter
    levels = 1
    while beta * tau ** (levels - 1) < D:
        levels += 1

    parent, weight = [None], [Fraction(0)]
    clusters = [(0, list(range(n)))]  # (tree node, points) at the current level
    for j in range(levels - 1, -1, -1):
        radius = beta * tau ** (j - 1)
        w = beta * tau**j
        nxt = []
        for node, pts in clusters:
            left = list(pts)
            for c in perm:
                if not left:
                    break
                ball = [x for x in left if metric(x, c) <= radius]
                if not ball:
                    continue
                left = [x for x in left if metric(x, c) > radius]
                parent.append(node)
                weight.append(w)
                nxt.append((len(parent) - 1, ball))
        clusters = nxt

    tree = WeightedTree(parent, weight)
    leaf_of = [None] * n
    for node, pts in clusters:
        assert len(pts) == 1, "level-0 clusters must be singletons"
        leaf_of[pts[0]] = node
    point_of = {l: p for p, l in enumerate(leaf_of)}
    return Embedding(validate_hst(tree, tau), tuple(leaf_of), point_of, bits.used - start)


def distortion(metric: MetricSpace, emb: Embedding):
    """Per-pair ratios tree_distance / metric_distance (``i < j``)."""
    t = emb.hst.tree
    out = {}
    for i in range(metric.n):
        for j in range(i + 1, metric.n):
            out[(i, j)] = t.node_distance(emb.leaf_of[i], emb.leaf_of[j]) / metric(i, j)
    return out


def random_metric(n, rng, max_dist=20):
    """Shortest-path closure of random integer weights on the complete graph."""
    d = [[0 if i == j else rng.randint(1, max_dist) for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(i):
            d[i][j] = d[j][i]
    for m in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][m] + d[m][j] < d[i][j]:
                    d[i][j] = d[i][m] + d[m][j]
    return MetricSpace(d)


def log2_ceil(m):
    return max(m - 1, 0).bit_length()
