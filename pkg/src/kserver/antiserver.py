"""Anti-server polytope: coordinates, separation oracle, divergence and repair.

Coordinates are indexed by pairs ``(u, j)`` with ``j = 1..n_u`` where ``n_u`` is
the number of leaves below ``u``. An integral configuration is encoded by
``x_uj = 0`` when the subtree of ``u`` holds at least ``j`` servers and ``1``
otherwise, so a leaf holds a server when ``x_l1 = 0``.

Points are kept as exact rationals (:class:`AntiServerPoint`); the solver works
on float arrays and goes through :func:`repair_into_polytope` to come back.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidMeasure, MassConditionError, NotNear, SizeMismatch
from .measure import MassVector
from .metric import WeightedTree

# repaired points live on the grid 1 / ((2k+1) * 2**REPAIR_BITS)
REPAIR_BITS = 36


def delta_for(k):
    return Fraction(1, 2 * k + 1)


class ChiIndex:
    """Flat layout of the coordinate set chi of a tree (BFS node order)."""

    def __init__(self, tree: WeightedTree):
        self.tree = tree
        self.offset = [0] * tree.n_nodes
        node_of, j_of = [], []
        pos = 0
        for u in tree.bfs:
            self.offset[u] = pos
            nu = tree.n_leaves_below[u]
            node_of.extend([u] * nu)
            j_of.extend(range(1, nu + 1))
            pos += nu
        self.size = pos
        self.node_of = np.array(node_of)
        self.j_of = np.array(j_of)
        w = [0.0 if u == tree.root else float(tree.weight[u]) for u in node_of]
        self.w = np.array(w)
        self.w_exact = [Fraction(0) if u == tree.root else tree.weight[u] for u in node_of]
        self.internal = [u for u in tree.bfs if not tree.is_leaf(u)]
        self.child_idx = {}
        for u in self.internal:
            idx = []
            for v in tree.children[u]:
                idx.extend(range(self.offset[v], self.offset[v] + tree.n_leaves_below[v]))
            self.child_idx[u] = np.array(idx, dtype=int)
        self.leaf_idx = np.array([self.offset[l] for l in tree.leaves], dtype=int)
        r = tree.root
        self.root_idx = np.arange(self.offset[r], self.offset[r] + tree.n_leaves_below[r])

    def own(self, u):
        return slice(self.offset[u], self.offset[u] + self.tree.n_leaves_below[u])

    def coord(self, u, j):
        if not 1 <= j <= self.tree.n_leaves_below[u]:
            raise IndexError(f"j={j} out of range for node {u}")
        return self.offset[u] + j - 1

    def pairs(self):
        return list(zip(self.node_of.tolist(), self.j_of.tolist()))


def chi_index(tree: WeightedTree) -> ChiIndex:
    idx = tree.__dict__.get("_chi")
    if idx is None:
        idx = ChiIndex(tree)
        tree.__dict__["_chi"] = idx
    return idx


@dataclass(frozen=True)
class AntiServerPoint:
    """Point of ``[0,1]^chi``; ``x`` holds exact rationals in chi order."""

    tree: WeightedTree
    k: int
    x: tuple

    @property
    def index(self):
        return chi_index(self.tree)

    @property
    def delta(self):
        return delta_for(self.k)

    def __getitem__(self, uj):
        u, j = uj
        return self.x[self.index.coord(u, j)]

    def leaf_value(self, leaf):
        return self.x[self.index.offset[leaf]]

    def asfloat(self):
        return np.array([float(v) for v in self.x])

    def asarray(self):
        return np.array(self.x, dtype=object)


class _Feasible:
    ok = True

    def __repr__(self):
        return "Feasible"

    def __bool__(self):
        return True


Feasible = _Feasible()


@dataclass
class Cut:
    """Separating inequality ``c . x <= c . y`` violated by ``violation`` at ``y``."""

    c: np.ndarray
    violation: float
    constraint: str
    ok = False

    def __bool__(self):
        return False


def _values(x):
    if isinstance(x, AntiServerPoint):
        return x.tree, x.k, x.asarray()
    raise TypeError("pass an AntiServerPoint or use separation_oracle_array")


def separation_oracle(x: AntiServerPoint, gamma, *, delta=None, mass=False):
    """Separation oracle for ``P`` (``P_delta`` when ``delta`` is given).

    Every constraint is written ``a . x <= b`` with ``||a||_inf = 1``. Returns
    :data:`Feasible` when no constraint is violated by more than ``gamma``;
    otherwise the most violated constraint as a :class:`Cut`. Prefix
    constraints are checked only on the ``n_u`` prefixes of chi_u sorted by
    value. ``mass=True`` adds ``sum_l x_l1 = n - k`` as two inequalities.
    """
    tree, k, vals = _values(x)
    if delta is True:
        delta = delta_for(k)
    return separation_oracle_array(tree, k, vals, gamma, delta=delta, mass=mass)


def separation_oracle_array(tree, k, vals, gamma, *, delta=None, mass=False):
    idx = chi_index(tree)
    if len(vals) != idx.size:
        raise SizeMismatch(f"expected {idx.size} coordinates, got {len(vals)}")
    best = (None, None, None, None)  # violation, kind, coords(+1), coords(-1)

    def offer(v, kind, plus, minus):
        nonlocal best
        if best[0] is None or v > best[0]:
            best = (v, kind, plus, minus)

    # box
    lo = int(np.argmin(vals))
    offer(-vals[lo], "box_lower", (), (lo,))
    hi = int(np.argmax(vals))
    offer(vals[hi] - 1, "box_upper", (hi,), ())
    # leaf floor
    if delta is not None:
        lv = vals[idx.leaf_idx]
        i = int(np.argmin(lv))
        offer(delta - lv[i], "leaf_floor", (), (int(idx.leaf_idx[i]),))
    # root
    if k < len(idx.root_idx):
        rv = vals[idx.root_idx[k:]]
        i = int(np.argmin(rv))
        offer(1 - rv[i], "root", (), (int(idx.root_idx[k + i]),))
    # sorted-prefix constraints
    for u in idx.internal:
        ci = idx.child_idx[u]
        cv = vals[ci]
        order = np.argsort(cv, kind="stable")
        cum = np.cumsum(cv[order])
        own = np.cumsum(vals[idx.own(u)])
        viol = own - cum
        s = int(np.argmax(viol))
        if viol[s] > 0 or best[0] is None:
            start = idx.offset[u]
            offer(viol[s], f"prefix@{u}", tuple(range(start, start + s + 1)),
                  tuple(int(c) for c in ci[order[: s + 1]]))
    if mass:
        tot = vals[idx.leaf_idx].sum()
        target = tree.n - k
        li = tuple(int(i) for i in idx.leaf_idx)
        offer(tot - target, "mass_upper", li, ())
        offer(target - tot, "mass_lower", (), li)

    v, kind, plus, minus = best
    if v <= gamma:
        return Feasible
    c = np.zeros(idx.size)
    c[list(plus)] += 1.0
    c[list(minus)] -= 1.0
    return Cut(c, float(v), kind)


class ReducedOracle:
    """Float separation oracle for ``P_delta`` with some coordinates held fixed.

    Only the coordinates listed in ``free`` are variables; the others keep
    their values from ``base``. Cuts are restricted to the free coordinates and
    rescaled to ``||c||_inf = 1``. Same verdicts as
    :func:`separation_oracle_array` on the assembled vector.
    """

    def __init__(self, tree, k, base, free, *, delta=None, mass=True):
        self.idx = idx = chi_index(tree)
        self.k = k
        self.base = np.asarray(base, dtype=float).copy()
        self.free = np.asarray(free, dtype=int)
        self._base = self.base.tolist()
        self._free = self.free.tolist()
        self.pos = [-1] * idx.size
        for p, j in enumerate(self._free):
            self.pos[j] = p
        self.delta = None if delta is None else float(delta)
        self.target = None if not mass else float(tree.n - k)
        self.leaves = idx.leaf_idx.tolist()
        self.nodes = [(idx.child_idx[u].tolist(), idx.offset[u], tree.n_leaves_below[u], u)
                      for u in idx.internal]
        self.root_tail = idx.root_idx[k:].tolist()

    def full(self, y):
        v = self.base.copy()
        v[self.free] = y
        return v

    def __call__(self, y, gamma):
        # plain Python lists: the vectors are short and this runs in the inner loop
        v = list(self._base)
        for j, val in zip(self._free, y.tolist()):
            v[j] = val
        best, cut = gamma, None
        for j in self._free:
            x = v[j]
            if -x > best:
                best, cut = -x, ("box_lower", (), (j,))
            elif x - 1 > best:
                best, cut = x - 1, ("box_upper", (j,), ())
        if self.delta is not None:
            d = self.delta
            for j in self.leaves:
                if d - v[j] > best:
                    best, cut = d - v[j], ("leaf_floor", (), (j,))
        for j in self.root_tail:
            if 1 - v[j] > best:
                best, cut = 1 - v[j], ("root", (), (j,))
        for ci, off, nu, u in self.nodes:
            order = sorted(ci, key=v.__getitem__)
            own = cum = 0.0
            for s in range(nu):
                own += v[off + s]
                cum += v[order[s]]
                if own - cum > best:
                    best, cut = own - cum, (f"prefix@{u}", range(off, off + s + 1), order[: s + 1])
        if self.target is not None:
            tot = sum(v[j] for j in self.leaves)
            if tot - self.target > best:
                best, cut = tot - self.target, ("mass_upper", self.leaves, ())
            elif self.target - tot > best:
                best, cut = self.target - tot, ("mass_lower", (), self.leaves)
        if cut is None:
            return Feasible
        kind, plus, minus = cut
        c = np.zeros(len(self._free))
        pos = self.pos
        for j in plus:
            if pos[j] >= 0:
                c[pos[j]] += 1.0
        for j in minus:
            if pos[j] >= 0:
                c[pos[j]] -= 1.0
        norm = np.abs(c).max() if len(c) else 0.0
        if norm == 0:
            raise NotNear(f"constraint {kind} is violated by fixed coordinates only")
        return Cut(c / norm, float(best), kind)


def from_config(tree: WeightedTree, k, config) -> AntiServerPoint:
    """Integral anti-server encoding of a server configuration."""
    if len(config) != k:
        raise SizeMismatch(f"configuration has {len(config)} servers, expected {k}")
    idx = chi_index(tree)
    cnt = tree.counts(config)
    x = [Fraction(0) if cnt[u] >= j else Fraction(1) for u, j in idx.pairs()]
    return AntiServerPoint(tree, k, tuple(x))


def lift_leaf_values(tree: WeightedTree, k, leaf_values) -> AntiServerPoint:
    """Complete leaf coordinates into a point of ``P``.

    Internal coordinates are the sorted merge of the children's coordinates,
    which meets every prefix constraint with equality on sorted prefixes; root
    coordinates are ``1_{j>k}``. The result lies in ``P`` whenever the leaf
    values lie in ``[0,1]`` and sum to at least ``n - k``.
    """
    idx = chi_index(tree)
    if not isinstance(leaf_values, dict):
        leaf_values = dict(zip(tree.leaves, leaf_values))
    x = [None] * idx.size
    lists = {}
    for u in tree.postorder:
        if tree.is_leaf(u):
            lists[u] = [Fraction(leaf_values[u])]
        else:
            lists[u] = sorted(v for c in tree.children[u] for v in lists[c])
        if u == tree.root:
            lists[u] = [Fraction(int(j > k)) for j in range(1, tree.n_leaves_below[u] + 1)]
        x[idx.own(u)] = lists[u]
    return AntiServerPoint(tree, k, tuple(x))


def to_leaf_measure(x: AntiServerPoint, tol=0, denom=None) -> MassVector:
    """Leaf measure ``z_l = (1 - x_l1) / (1 - delta)`` of mass ``k + 1/2``.

    With ``denom`` set, the masses are rounded to multiples of ``1/denom``
    (largest remainder, clamped to ``[0, 1]``) so that the total is exactly
    ``k + 1/2``; leaves whose exact mass is already on the grid are kept.
    Raises :class:`MassConditionError` when ``sum_l x_l1`` misses ``n - k`` by
    more than ``tol``.
    """
    tree, k = x.tree, x.k
    d = delta_for(k)
    leaf_x = [Fraction(x.leaf_value(l)) for l in tree.leaves]
    gap = sum(leaf_x) - (tree.n - k)
    if abs(gap) > tol:
        raise MassConditionError(f"sum of leaf coordinates off by {float(gap):.3g}")
    z = [(1 - v) / (1 - d) for v in leaf_x]
    if denom is None:
        if gap:
            raise MassConditionError("exact conversion needs the mass condition to hold exactly")
        return MassVector.from_leaf_masses(tree, z)
    if denom % 2:
        raise InvalidMeasure("denominator must be even to carry mass k + 1/2")
    target = (2 * k + 1) * denom // 2
    raw = [min(max(v, Fraction(0)), Fraction(1)) * denom for v in z]
    base = [int(r) for r in raw]  # floor for non-negative rationals
    rem = [r - b for r, b in zip(raw, base)]
    diff = target - sum(base)
    n = len(base)
    while diff:
        if diff > 0:
            cand = sorted((i for i in range(n) if base[i] < denom),
                          key=lambda i: (-rem[i], i))
        else:
            # leaves sitting exactly at a full unit are touched last
            cand = sorted((i for i in range(n) if base[i] > 0 and rem[i] >= 0),
                          key=lambda i: (base[i] == denom, rem[i], i))
        if not cand:
            raise MassConditionError("cannot apportion mass k + 1/2")
        step = 1 if diff > 0 else -1
        for i in cand[: abs(diff)]:
            base[i] += step
            rem[i] = Fraction(-1) if step > 0 else Fraction(2)
            diff -= step
    return MassVector.from_leaf_masses(tree, [Fraction(b, denom) for b in base])


def divergence_arrays(w, x, xp, delta):
    a = x + delta
    b = xp + delta
    return float(np.sum(w * (a * np.log(a / b) - x + xp)))


def divergence_gradient_arrays(w, x, xp, delta):
    return w * np.log((x + delta) / (xp + delta))


def divergence(x: AntiServerPoint, xp: AntiServerPoint) -> float:
    """Weighted entropy-like divergence ``D(x || x')`` summed over non-root nodes."""
    idx = x.index
    d = float(x.delta)
    return divergence_arrays(idx.w, x.asfloat(), xp.asfloat(), d)


def divergence_gradient(x: AntiServerPoint, xp: AntiServerPoint) -> np.ndarray:
    idx = x.index
    return divergence_gradient_arrays(idx.w, x.asfloat(), xp.asfloat(), float(x.delta))


def positive_movement(x: AntiServerPoint, xp: AntiServerPoint):
    """``sum_{u,i} w_u (x_ui - x'_ui)^+``; exact when both points are exact."""
    w = x.index.w_exact
    total = Fraction(0)
    for wi, a, b in zip(w, x.x, xp.x):
        if a > b:
            total += wi * (a - b)
    return total


def repair_into_polytope(y, eta, *, tree=None, k=None, pinned=()) -> AntiServerPoint:
    """Move an almost-feasible point into ``P_delta``.

    ``y`` is an :class:`AntiServerPoint` or a float array (then ``tree`` and
    ``k`` are required). Values are snapped to a fine rational grid, clamped
    to the box and the leaf floor, and the prefix constraints are restored
    root-down by raising the smallest raisable child coordinates. Coordinates
    listed in ``pinned`` (leaf nodes) are never moved; when a constraint can
    only be met by lowering a node's own coordinates those are lowered and
    locked, and the pass is repeated. ``eta`` is the caller's bound on the
    distance of ``y`` from the polytope and only caps the number of passes.
    """
    if isinstance(y, AntiServerPoint):
        tree, k = y.tree, y.k
        vals = [Fraction(v) for v in y.x]
    else:
        vals = [float(v) for v in y]
    idx = chi_index(tree)
    Q = (2 * k + 1) << REPAIR_BITS
    dq = Q // (2 * k + 1)  # delta in grid units
    if isinstance(y, AntiServerPoint):
        X = [int(round(v * Q)) if (v * Q).denominator != 1 else int(v * Q) for v in vals]
    else:
        X = [int(round(v * Q)) for v in vals]
    X = [min(max(a, 0), Q) for a in X]
    pinned_idx = {idx.offset[l] for l in pinned}
    for i in idx.leaf_idx:
        X[i] = dq if i in pinned_idx else max(X[i], dq)
    for j, i in enumerate(idx.root_idx, start=1):
        X[i] = Q if j > k else min(X[i], Q)
        if j <= k:
            X[i] = max(X[i], 0)
    locked = set(pinned_idx)

    n_nodes = max(1, len(idx.internal))
    for _ in range(4 * n_nodes + 8):
        changed = False
        for u in idx.internal:
            changed |= _repair_node(idx, u, X, Q, locked)
        if not changed:
            break
    else:
        raise NotNear("repair did not converge")

    x = AntiServerPoint(tree, k, tuple(Fraction(a, Q) for a in X))
    verdict = separation_oracle(x, 0, delta=delta_for(k))
    if not verdict:
        raise NotNear(f"repaired point still violates {verdict.constraint}")
    return x


def _repair_node(idx, u, X, Q, locked):
    ci = [int(c) for c in idx.child_idx[u]]
    own = list(range(idx.offset[u], idx.offset[u] + len(ci)))
    root_node = u == idx.tree.root
    changed = False
    for _ in range(8 * len(ci) + 8):
        order = sorted(ci, key=lambda c: (X[c], c))
        cum = s_own = 0
        bad = None
        for s, c in enumerate(order):
            cum += X[c]
            s_own += X[own[s]]
            if s_own > cum:
                bad = (s, s_own - cum)
                break
        if bad is None:
            return changed
        s, deficit = bad
        cand = [c for c in order[: s + 1] if c not in locked and X[c] < Q]
        if cand:
            c = cand[0]
            X[c] += min(deficit, Q - X[c])
        else:
            if root_node:
                raise NotNear(f"root constraint at prefix {s + 1} cannot be restored")
            for i in reversed(own[: s + 1]):
                take = min(deficit, X[i])
                X[i] -= take
                deficit -= take
                locked.add(i)
                if not deficit:
                    break
        changed = True
    raise NotNear(f"prefix repair at node {u} did not settle")
