"""Barely random ensembles that track a barely fractional trajectory.

An :class:`Ensemble` holds ``m`` server configurations. It is *consistent*
with a measure ``z`` when ``z_u`` is the average count of servers below ``u``,
and *balanced* when every member's count below ``u`` is ``floor(z_u)`` or
``ceil(z_u)``. On HSTs each change of ``z`` is split into unit moves between
leaves; each unit move is realized on one or two members and followed by
exchanges that restore balancedness. On a line a closed formula gives the
members directly.
"""

import json
import math
from fractions import Fraction

from .bits import BitStream
from .errors import ExchangeUnavailable, InvariantViolation, MassMismatch, NoCandidate, NotAPath
from .measure import MassVector, _lcm, ot_distance
from .metric import WeightedTree, log2_ceil


def _band(z: MassVector, u):
    v = z.value(u)
    fl = math.floor(v)
    return fl, (fl if v == fl else fl + 1)


class Ensemble:
    """``m`` configurations stored as per-node server counts."""

    def __init__(self, tree: WeightedTree, members):
        self.tree = tree
        self.counts = [tree.counts(c) for c in members]
        self.m = len(self.counts)
        if self.m == 0:
            raise ValueError("an ensemble needs at least one member")

    @classmethod
    def constant(cls, tree, config, m):
        return cls(tree, [list(config)] * m)

    def copy(self):
        e = Ensemble.__new__(Ensemble)
        e.tree, e.m = self.tree, self.m
        e.counts = [list(c) for c in self.counts]
        return e

    def member(self, i):
        """Member ``i`` as a sorted list of points (multiset)."""
        c = self.counts[i]
        tree = self.tree
        out = []
        for u in range(tree.n_nodes):
            own = c[u] - sum(c[ch] for ch in tree.children[u])
            out.extend([u] * own)
        return out

    def members(self):
        return [self.member(i) for i in range(self.m)]

    def measure(self) -> MassVector:
        total = [sum(c[u] for c in self.counts) for u in range(self.tree.n_nodes)]
        return MassVector(self.tree, self.m, total).reduced()

    def _shift(self, i, leaf, step):
        c = self.counts[i]
        u = leaf
        while u is not None:
            c[u] += step
            u = self.tree.parent[u]

    def transfer(self, i, a, b):
        """Member ``i`` moves one server from point ``a`` to point ``b``."""
        if self.counts[i][a] - sum(self.counts[i][c] for c in self.tree.children[a]) < 1:
            raise NoCandidate(f"member {i} has no server at {a}")
        self._shift(i, a, -1)
        self._shift(i, b, +1)

    def is_consistent(self, z: MassVector):
        return self.measure() == z

    def imbalance(self, z: MassVector):
        """First ``(node, member)`` whose count leaves the floor/ceiling band, or ``None``."""
        for u in self.tree.bfs:
            lo, hi = _band(z, u)
            for i, c in enumerate(self.counts):
                if not lo <= c[u] <= hi:
                    return u, i
        return None

    def is_balanced(self, z: MassVector):
        return self.imbalance(z) is None

    def serves(self, point):
        return all(c[point] - sum(c[ch] for ch in self.tree.children[point]) >= 1
                   for c in self.counts)

    def to_json(self, z: MassVector | None = None):
        d = {"members": self.members()}
        if z is not None:
            d["measure"] = {"denominator": z.denom, "numerators": list(z.num)}
        return json.dumps(d, sort_keys=True)


def member_distance(tree: WeightedTree, a, b):
    """Matching distance between two count vectors on a tree."""
    w = tree.weight
    return sum((w[u] * abs(a[u] - b[u]) for u in range(tree.n_nodes) if u != tree.root), Fraction(0))


def ensemble_cost(old: Ensemble, new: Ensemble):
    """``(1/m) sum_i d(R_i, R_i')``."""
    tot = sum((member_distance(old.tree, a, b) for a, b in zip(old.counts, new.counts)), Fraction(0))
    return tot / old.m


def balance_gap(ens: Ensemble, z: MassVector):
    """``(1/m) sum_v w_v sum_i min(|n_v - floor z_v|, |n_v - ceil z_v|)``; zero iff balanced."""
    tree = ens.tree
    total = Fraction(0)
    for v in range(tree.n_nodes):
        lo, hi = _band(z, v)
        dev = sum(min(abs(c[v] - lo), abs(c[v] - hi)) for c in ens.counts)
        if dev:
            w = tree.weight[v] if v != tree.root else Fraction(1)
            total += w * dev
    return total / ens.m


# -- elementary moves ----------------------------------------------------------------

def elementary_moves(z: MassVector, z2: MassVector, m=None):
    """Split the change from ``z`` to ``z2`` into unit moves ``(a, b)`` of mass ``1/m``.

    Surplus and deficit units are matched bottom-up at their lowest common
    ancestor, so the moves never cancel along an edge and their total length
    is ``m * OT(z, z2)``. Both measures must be ``m``-barely fractional
    (point masses may sit at internal nodes).
    """
    if z.mass != z2.mass:
        raise MassMismatch(f"masses {z.mass} and {z2.mass} differ")
    tree = z.tree
    if m is None:
        m = _lcm(z.reduced().denom, z2.reduced().denom)
    if not (z.is_barely(m) and z2.is_barely(m)):
        raise ValueError(f"measures are not {m}-barely fractional")
    a = z.with_denom(_lcm(z.denom, m))
    b = z2.with_denom(_lcm(z2.denom, m))
    sa, sb = a.denom // m, b.denom // m
    surplus, deficit = {}, {}
    moves = []
    for u in tree.postorder:
        d = a.point_num(u) // sa - b.point_num(u) // sb
        sur = [(u, d)] if d > 0 else []
        dfc = [(u, -d)] if d < 0 else []
        for c in tree.children[u]:
            sur += surplus.pop(c, [])
            dfc += deficit.pop(c, [])
        # match everything that meets here
        sur.sort()
        dfc.sort()
        si = di = 0
        sur = [list(x) for x in sur]
        dfc = [list(x) for x in dfc]
        while si < len(sur) and di < len(dfc):
            q = min(sur[si][1], dfc[di][1])
            moves.extend([(sur[si][0], dfc[di][0])] * q)
            sur[si][1] -= q
            dfc[di][1] -= q
            if not sur[si][1]:
                si += 1
            if not dfc[di][1]:
                di += 1
        surplus[u] = [tuple(x) for x in sur[si:] if x[1]]
        deficit[u] = [tuple(x) for x in dfc[di:] if x[1]]
    return moves


def _unit_shift(z: MassVector, a, b, m):
    M = _lcm(z.denom, m)
    zz = z.with_denom(M)
    num = list(zz.num)
    s = M // m
    tree = z.tree
    u = a
    while u is not None:
        num[u] -= s
        u = tree.parent[u]
    u = b
    while u is not None:
        num[u] += s
        u = tree.parent[u]
    return MassVector(tree, M, num).reduced()


def _own(c, tree, u):
    return c[u] - sum(c[ch] for ch in tree.children[u])


def _path_ok(ens, i, a, b, z2):
    """Would moving ``a -> b`` in member ``i`` keep every node on the path in band?"""
    tree = ens.tree
    top = tree.lca(a, b)
    c = ens.counts[i]
    for u in tree.path_up(a, top):
        lo, _ = _band(z2, u)
        if c[u] - 1 < lo:
            return False
    for u in tree.path_up(b, top):
        _, hi = _band(z2, u)
        if c[u] + 1 > hi:
            return False
    return True


def apply_elementary(ens: Ensemble, z: MassVector, move, m=None, *, check=True):
    """Realize one unit move ``a -> b`` of the companion measure.

    Prefers a member that can send its server at ``a`` to ``b`` without leaving
    the band anywhere; otherwise a member holding ``a`` but not ``b`` (or, for
    multisets, one above the floor at ``a``); otherwise a swap through a point
    ``c`` below ``lca(a, b)`` held by a member lacking ``a`` and ``b``. Balance
    is then restored by :func:`rebalance` below the common ancestor.

    Returns ``(ensemble, z')``; the input ensemble is modified in place.
    """
    a, b = move
    m = m or ens.m
    tree = ens.tree
    z2 = _unit_shift(z, a, b, m)
    top = tree.lca(a, b)
    holders = [i for i, c in enumerate(ens.counts) if _own(c, tree, a) >= 1]
    if not holders:
        raise NoCandidate(f"no member holds a server at {a}")
    pick = next((i for i in holders if _path_ok(ens, i, a, b, z2)), None)
    if pick is None:
        pick = next((i for i in holders if _own(ens.counts[i], tree, b) == 0), None)
    if pick is not None:
        ens.transfer(pick, a, b)
    else:
        i = holders[0]
        lacking = [j for j, c in enumerate(ens.counts)
                   if _own(c, tree, a) == 0 and _own(c, tree, b) == 0]
        done = False
        for j in lacking:
            cands = [p for p in _points_below(tree, top)
                     if _own(ens.counts[j], tree, p) > _own(ens.counts[i], tree, p)]
            if cands:
                c = cands[0]
                ens.transfer(i, a, c)
                ens.transfer(j, c, b)
                done = True
                break
        if not done:
            ens.transfer(i, a, b)
    rebalance(ens, z2, top)
    if check:
        _assert_state(ens, z2)
    return ens, z2


def _points_below(tree, u):
    out = []
    stack = [u]
    while stack:
        v = stack.pop()
        out.append(v)
        stack.extend(tree.children[v])
    return sorted(out)


def _assert_state(ens, z):
    if not ens.is_consistent(z):
        raise InvariantViolation("ensemble is not consistent with the measure")
    bad = ens.imbalance(z)
    if bad is not None:
        raise InvariantViolation(f"member {bad[1]} out of band at node {bad[0]}")


def _descend(tree, u, more, less):
    """Walk from ``u`` to a point where ``more`` holds a server, staying where ``more`` exceeds ``less``."""
    while True:
        if _own(more, tree, u) >= 1 and (not tree.children[u] or
                                         _own(more, tree, u) > _own(less, tree, u)):
            return u
        nxt = [c for c in tree.children[u] if more[c] > less[c]]
        if not nxt:
            nxt = [c for c in tree.children[u] if more[c] > 0]
            if not nxt:
                return u
        u = nxt[0]


def rebalance(ens: Ensemble, z: MassVector, start=None, max_exchanges=None):
    """Exchange servers across subtree boundaries until every member is in band.

    Nodes are visited top-down from ``start``. At an out-of-band node ``v`` a
    member ``i`` above the band is paired with a member ``j`` below the
    ceiling (or a member below the band with one above the floor); ``i``
    hands a server inside ``L_v`` to ``j`` and receives one of ``j``'s servers
    from a sibling subtree of ``v`` where ``j`` has more servers than ``i``.
    Consistency is untouched and no other node leaves its band.
    """
    tree = ens.tree
    start = tree.root if start is None else start
    if max_exchanges is None:
        max_exchanges = ens.m * max(1, int(z.mass)) * tree.n_nodes + 1
    done = 0
    order = [u for u in tree.bfs if tree.is_ancestor(start, u) or u == start]
    for v in order:
        if v == tree.root:
            continue
        lo, hi = _band(z, v)
        while True:
            cs = [c[v] for c in ens.counts]
            over = [i for i, x in enumerate(cs) if x > hi]
            under = [i for i, x in enumerate(cs) if x < lo]
            if over:
                i = over[0]
                j = next((j for j, x in enumerate(cs) if x < hi), None)
            elif under:
                j = under[0]
                i = next((i for i, x in enumerate(cs) if x > lo), None)
            else:
                break
            if i is None or j is None:
                raise ExchangeUnavailable(f"no partner member at node {v}")
            _exchange(ens, v, i, j)
            done += 1
            if done > max_exchanges:
                raise ExchangeUnavailable("rebalancing did not terminate")
    return ens


def _exchange(ens, v, i, j):
    """Member ``i`` gives a server below ``v`` to ``j`` and takes one from a sibling subtree."""
    tree = ens.tree
    ci, cj = ens.counts[i], ens.counts[j]
    p = tree.parent[v]
    sib = [s for s in tree.children[p] if s != v and cj[s] > ci[s]]
    own_p = _own(cj, tree, p) > _own(ci, tree, p)
    if not sib and not own_p:
        raise ExchangeUnavailable(f"member {j} has no server outside node {v} to give")
    a = _descend(tree, v, ci, cj)
    b = _descend(tree, sib[0], cj, ci) if sib else p
    if _own(ci, tree, a) < 1 or _own(cj, tree, b) < 1:
        raise ExchangeUnavailable(f"exchange at node {v} found no servers")
    ens.transfer(i, a, b)
    ens.transfer(j, b, a)


class HSTRounding:
    """Ensemble that follows an ``m``-barely fractional leaf-measure trajectory."""

    def __init__(self, tree: WeightedTree, m, config, *, keep=False):
        self.tree, self.m = tree, m
        self.ens = Ensemble.constant(tree, config, m)
        self.z = MassVector.from_config(tree, config)
        self.cost = Fraction(0)
        self.ot = Fraction(0)
        self.member_cost = [Fraction(0)] * m
        self.history = [self.ens.members()] if keep else None
        self.moves = 0

    def update(self, z_new: MassVector):
        before = self.ens.copy()
        self.ot += ot_distance(self.z, z_new)
        z = self.z
        for mv in elementary_moves(z, z_new, self.m):
            self.ens, z = apply_elementary(self.ens, z, mv, self.m)
            self.moves += 1
        if z != z_new:
            raise InvariantViolation("elementary moves did not reproduce the target measure")
        self.z = z_new
        for i in range(self.m):
            self.member_cost[i] += member_distance(self.tree, before.counts[i], self.ens.counts[i])
        step = ensemble_cost(before, self.ens)
        self.cost += step
        if self.history is not None:
            self.history.append(self.ens.members())
        return step


# -- line ------------------------------------------------------------------------------

def _check_path(tree: WeightedTree):
    for u in range(tree.n_nodes):
        if len(tree.children[u]) > 1:
            raise NotAPath(f"node {u} has {len(tree.children[u])} children")


def round_line(z: MassVector, m) -> Ensemble:
    """Members ``R_i = (max{u : floor(z_u + (i-1)/m) >= h})_{h=1..k}`` on a rooted path.

    ``z_u`` is the mass at positions at or below ``u``. Reading ``>= h`` instead
    of ``= h`` lets a point carry several servers when its point mass is at
    least two.
    """
    tree = z.tree
    _check_path(tree)
    if not z.is_barely(m):
        raise ValueError(f"measure is not {m}-barely fractional")
    k = z.mass
    if k.denominator != 1:
        raise MassMismatch("line rounding needs integral total mass")
    chain = list(tree.bfs)
    members = []
    for i in range(1, m + 1):
        shift = Fraction(i - 1, m)
        fl = [math.floor(z.value(u) + shift) for u in chain]
        pts = []
        for h in range(1, int(k) + 1):
            best = None
            for pos, u in enumerate(chain):
                if fl[pos] >= h:
                    best = u
            pts.append(best)
        members.append(pts)
    return Ensemble(tree, members)


# -- sampling and advice ---------------------------------------------------------------

def draw_index(m, bits: BitStream, rounds=1):
    """Index in ``[0, m)`` from exactly ``rounds * ceil(log2 m)`` bits.

    All rounds are drawn up front; the first draw below ``m`` wins and ``draw mod
    m`` is the fallback, so the bit count never depends on the outcome.
    Returns ``(index, bits_used, defect)`` where ``defect`` is the largest
    deviation of an index probability from ``1/m``.
    """
    b = log2_ceil(m)
    if b == 0:
        return 0, 0, Fraction(0)
    draws = [bits.bits(b) for _ in range(rounds)]
    pick = next((d for d in draws if d < m), draws[-1] % m)
    return pick, b * rounds, sampling_defect(m, rounds)


def sampling_defect(m, rounds=1):
    """``max_i |P(i) - 1/m|`` for :func:`draw_index`."""
    b = log2_ceil(m)
    N = 2 ** b
    if N == m:
        return Fraction(0)
    reject = Fraction(N - m, N)
    probs = []
    for i in range(m):
        accept = Fraction(1, N) * sum(reject ** r for r in range(rounds))
        fallback = reject ** (rounds - 1) * Fraction(sum(1 for d in range(m, N) if d % m == i), N)
        probs.append(accept + fallback)
    return max(abs(p - Fraction(1, m)) for p in probs)


class Sampled:
    """One member of an ensemble trajectory, chosen once at the start."""

    def __init__(self, history, bits: BitStream, rounds=1):
        m = len(history[0])
        self.index, self.bits_used, self.defect = draw_index(m, bits, rounds)
        self.trajectory = [h[self.index] for h in history]


def sample(history, bits: BitStream, rounds=1):
    """Pick a member of a logged ensemble trajectory; returns ``(configs, bits_used)``."""
    s = Sampled(history, bits, rounds)
    return s.trajectory, s.bits_used


def advised_cost(history, tree: WeightedTree):
    """Cheapest member of a logged ensemble trajectory (best of ``m`` in hindsight)."""
    m = len(history[0])
    costs = [Fraction(0)] * m
    for prev, cur in zip(history, history[1:]):
        for i in range(m):
            costs[i] += member_distance(tree, tree.counts(prev[i]), tree.counts(cur[i]))
    return min(costs), costs
