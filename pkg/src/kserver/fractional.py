"""Online fractional k-server on HSTs by approximate Bregman projections.

Each request pins the requested leaf's anti-server coordinate to ``delta`` and
projects the previous point onto ``P_delta`` in the divergence ``D(. || x(t-1))``.
The projection is computed with :func:`~kserver.solver.minimize_convex`,
repaired into the polytope, read off as a leaf measure of mass ``k + 1/2`` and
reduced to mass ``k``.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .antiserver import (AntiServerPoint, ReducedOracle, chi_index, delta_for, divergence_arrays,
                         lift_leaf_values, repair_into_polytope, separation_oracle, to_leaf_measure)
from .errors import InvalidMeasure, InvalidTree, SizeMismatch, UnknownLeaf
from .measure import MassVector, ot_distance, sigma_num, validate
from .metric import TauHST, WeightedTree, validate_hst
from .solver import OracleConvexFunction, OracleConvexSet, minimize_convex

MIN_TAU = 10
# leaf measures read off the anti-server point are rounded to this grid
MEASURE_DENOM = 2 ** 24


def default_m(k):
    return 2 * k * k + k


def step_precision(k):
    return Fraction(1, 2 * default_m(k))


def solver_precision(tree: WeightedTree, k, eps_step):
    """``eps_step / (16 D log^2 k n)``; ``log^2 k`` is floored at one for ``k = 1``."""
    lg = max(1.0, math.log2(k) ** 2) if k > 1 else 1.0
    return float(eps_step) / (16 * float(tree.diameter) * lg * tree.n)


@dataclass
class StepRecord:
    leaf: int
    free: np.ndarray
    base: np.ndarray
    prev: np.ndarray
    lipschitz: float
    eps_solver: float


@dataclass
class FractionalState:
    tree: WeightedTree
    k: int
    x: AntiServerPoint
    eps_step: Fraction
    measure: MassVector
    cost: Fraction = Fraction(0)
    T: int = 0
    degenerate: bool = False
    last: StepRecord | None = field(default=None, repr=False)


def _as_tree(tree):
    if isinstance(tree, TauHST):
        if tree.tau < MIN_TAU:
            raise InvalidTree(f"tau = {tree.tau} is below {MIN_TAU}")
        return tree.tree
    if not isinstance(tree, WeightedTree):
        raise InvalidTree("expected a WeightedTree or TauHST")
    # a single-level tree is an HST for every tau
    if max(tree.depth) > 1:
        validate_hst(tree, _infer_tau(tree))
    return tree


def _infer_tau(tree):
    for u in tree.bfs:
        if u != tree.root and tree.children[u]:
            tau = tree.weight[u] / tree.weight[tree.children[u][0]]
            if tau < MIN_TAU:
                raise InvalidTree(f"edge ratio {tau} is below {MIN_TAU}")
            return tau
    return Fraction(MIN_TAU)


def init(tree, k, C0, eps_step=None) -> FractionalState:
    """Start from the integral configuration ``C0``.

    Occupied leaves get ``x_l1 = delta``; unoccupied leaves share the value that
    makes ``sum_l x_l1 = n - k`` hold exactly, and internal coordinates are
    completed by :func:`~kserver.antiserver.lift_leaf_values`. With ``k = n``
    the mass condition cannot hold; the state is marked degenerate and never
    moves (every leaf keeps a server).
    """
    tree = _as_tree(tree)
    if len(C0) != k:
        raise SizeMismatch(f"initial configuration has {len(C0)} servers, expected {k}")
    cnt = tree.counts(C0)
    d = delta_for(k)
    occ = [l for l in tree.leaves if cnt[l] > 0]
    free = tree.n - len(occ)
    eps_step = Fraction(eps_step) if eps_step is not None else step_precision(k)
    measure = MassVector.from_config(tree, C0)
    if free == 0:
        vals = {l: d for l in tree.leaves}
        x = lift_leaf_values(tree, k, vals)
        return FractionalState(tree, k, x, eps_step, measure, degenerate=True)
    v = (tree.n - k - len(occ) * d) / free
    vals = {l: (d if cnt[l] else v) for l in tree.leaves}
    x = lift_leaf_values(tree, k, vals)
    return FractionalState(tree, k, x, eps_step, measure)


def _feasible_leaf_values(x_leaf, pin, d):
    """Leaf values with ``x_pin = delta`` and unchanged sum, moved proportionally to headroom."""
    out = dict(x_leaf)
    extra = out[pin] - d
    out[pin] = d
    if extra > 0:
        room = sum(1 - v for l, v in out.items() if l != pin)
        for l in out:
            if l != pin:
                out[l] += extra * (1 - out[l]) / room
    return out


def serve(state: FractionalState, leaf, *, record=False):
    """Serve a request at ``leaf``; returns ``(measure, state)``.

    ``state`` is updated in place and also returned. With ``record=True`` the
    projection problem is kept in ``state.last`` for auditing.
    """
    tree, k = state.tree, state.k
    if not tree.is_leaf(leaf):
        raise UnknownLeaf(f"{leaf} is not a leaf")
    state.T += 1
    d = delta_for(k)
    if state.degenerate or state.x.leaf_value(leaf) == d:
        # the previous point already meets the new constraint: zero divergence
        state.last = None
        if not state.degenerate and state.measure.value(leaf) < 1:
            new = snap(state.measure, leaf, state.eps_step)
            state.cost += ot_distance(state.measure, new)
            state.measure = new
        return state.measure, state

    idx = chi_index(tree)
    prev = state.x.asfloat()
    pin = idx.offset[leaf]
    fixed = np.zeros(idx.size, dtype=bool)
    fixed[idx.root_idx] = True
    fixed[pin] = True
    free = np.flatnonzero(~fixed)
    base = prev.copy()
    base[idx.root_idx] = [1.0 if j > k else 0.0 for j in range(1, len(idx.root_idx) + 1)]
    base[pin] = float(d)
    df = float(d)
    w = idx.w

    oracle = ReducedOracle(tree, k, base, free, delta=df, mass=True)
    full = oracle.full

    wf, pf = w[free], prev[free]
    pd = pf + df
    fixed_part = divergence_arrays(w, base, prev, df) - divergence_arrays(wf, base[free], pf, df)

    def value_grad(y):
        a = y + df
        lg = np.log(a / pd)
        return fixed_part + float(np.dot(wf, a * lg - y + pf)), wf * lg

    def value(y):
        return value_grad(y)[0]

    def grad(y):
        return value_grad(y)[1]

    alpha = float(wf.min()) / (1 + df) if len(wf) else 1.0
    lip = float(np.sqrt(np.sum((wf * math.log((1 + df) / df)) ** 2)))
    eps_solver = solver_precision(tree, k, state.eps_step)

    start_leaves = {l: Fraction(state.x.leaf_value(l)) for l in tree.leaves}
    probe = lift_leaf_values(tree, k, _feasible_leaf_values(start_leaves, leaf, d))
    hi = value(probe.asfloat()[free])
    dim = len(free)
    f = OracleConvexFunction(value, grad, lip, alpha, (0.0, hi), value_grad)
    K = OracleConvexSet(dim, math.sqrt(dim), oracle, np.clip(prev[free], 0, 1))
    # the mass condition is an equality, so points are accepted at eps/2
    y = minimize_convex(f, K, eps_solver, gamma=eps_solver / 2)
    x_new = repair_into_polytope(full(y), eps_solver, tree=tree, k=k, pinned=[leaf])

    z = to_leaf_measure(x_new, tol=state.eps_step, denom=MEASURE_DENOM)
    new = snap(reduce_mass(z), leaf, state.eps_step)
    state.cost += ot_distance(state.measure, new)
    state.measure = new
    state.x = x_new
    state.last = StepRecord(leaf, free, base, prev, lip, eps_solver) if record else None
    return new, state


class FractionalAlgorithm:
    """Object wrapper around :func:`init` / :func:`serve` for composition."""

    def __init__(self, tree, k, C0, eps_step=None, *, record=False):
        self.state = init(tree, k, C0, eps_step)
        self.record = record

    tree = property(lambda self: self.state.tree)
    k = property(lambda self: self.state.k)
    measure = property(lambda self: self.state.measure)
    cost = property(lambda self: self.state.cost)

    def serve(self, leaf):
        z, _ = serve(self.state, leaf, record=self.record)
        return z, self


def reduce_mass(z: MassVector) -> MassVector:
    """Map a leaf measure of mass ``k + 1/2`` to one of mass ``k``.

    ``sigma`` is applied to every subtree aggregate; the resulting inner
    measure is pushed back to the leaves top-down. Each child ``c`` of a node
    with target ``T`` receives a target in ``[sigma(z_c), z_c]``, the slack
    ``T - sum sigma(z_c)`` being shared in proportion to ``z_c - sigma(z_c)``
    (largest remainder on the common grid). Leaves with integral mass keep it.
    """
    rep = validate(z, "leaf")
    if not rep.ok:
        raise InvalidMeasure(str(rep))
    if z.mass.denominator != 2:
        raise InvalidMeasure(f"mass {z.mass} is not k + 1/2")
    tree = z.tree
    M = z.denom if z.denom % 2 == 0 else 2 * z.denom
    a = list(z.with_denom(M).num)
    sig = [sigma_num(v, M) for v in a]
    target = [0] * tree.n_nodes
    target[tree.root] = sig[tree.root]
    for u in tree.bfs:
        ch = tree.children[u]
        if not ch:
            continue
        lo = [sig[c] for c in ch]
        room = [a[c] - sig[c] for c in ch]
        slack = target[u] - sum(lo)
        total_room = sum(room)
        if slack < 0 or slack > total_room:
            raise InvalidMeasure(f"cannot split target at node {u}")
        if total_room == 0:
            share = [0] * len(ch)
        else:
            exact = [Fraction(slack * r, total_room) for r in room]
            share = [int(e) for e in exact]
            left = slack - sum(share)
            order = sorted(range(len(ch)), key=lambda i: (-(exact[i] - share[i]), i))
            for i in order:
                if not left:
                    break
                if share[i] < room[i]:
                    share[i] += 1
                    left -= 1
        for c, l, s in zip(ch, lo, share):
            target[c] = l + s
    return MassVector(tree, M, target).reduced()


def snap(z: MassVector, leaf, eps_step) -> MassVector:
    """Raise the requested leaf to exactly one unit when it is within ``eps_step``.

    The deficit is taken from the heaviest other leaf (lowest id on ties).
    """
    have = z.value(leaf)
    if have >= 1 or have < 1 - Fraction(eps_step):
        return z
    need = 1 - have
    masses = z.leaf_masses()
    donors = sorted((l for l in masses if l != leaf), key=lambda l: (-masses[l], l))
    for l in donors:
        if not need:
            break
        take = min(need, masses[l])
        masses[l] -= take
        masses[leaf] += take
        need -= take
    return MassVector.from_leaf_masses(z.tree, masses)


def random_feasible_point(state: FractionalState, leaf, rng, mix=None) -> AntiServerPoint:
    """Random point of ``P_delta`` with ``x_leaf = delta`` and the mass condition.

    Leaf values are drawn uniformly in ``[delta, 1]`` and shifted toward the
    nearer bound to meet the mass condition; ``mix`` in ``[0, 1]`` blends the
    result with the current point (useful for probes near the optimum).
    """
    tree, k = state.tree, state.k
    d = delta_for(k)
    others = [l for l in tree.leaves if l != leaf]
    target = tree.n - k - d
    u = [Fraction(int(rng.integers(0, 2 ** 20)), 2 ** 20) * (1 - d) + d for _ in others]
    s = sum(u)
    lo_sum = len(others) * d
    if s > target:
        u = [d + (v - d) * (target - lo_sum) / (s - lo_sum) for v in u]
    elif s < target:
        hi_sum = len(others)
        u = [1 - (1 - v) * (hi_sum - target) / (hi_sum - s) for v in u]
    vals = dict(zip(others, u))
    vals[leaf] = d
    if mix is not None:
        mix = Fraction(mix)
        cur = {l: Fraction(state.x.leaf_value(l)) for l in tree.leaves}
        vals = {l: mix * vals[l] + (1 - mix) * cur[l] for l in tree.leaves}
    return lift_leaf_values(tree, k, vals)


def audit_projection(state: FractionalState, rng, probes=200):
    """Compare ``D(x(t) || x(t-1))`` against random feasible probes.

    Returns ``(worst_gap, slack)`` where ``worst_gap`` is the largest
    ``D(x(t)||x(t-1)) - D(probe||x(t-1))`` and ``slack = L * eps_solver``; the
    step passes when ``worst_gap <= slack``. Also checks the separation oracle
    at ``gamma = eps_step``.
    """
    rec = state.last
    if rec is None:
        raise ValueError("no recorded projection; serve with record=True")
    idx = chi_index(state.tree)
    d = float(delta_for(state.k))
    cur = divergence_arrays(idx.w, state.x.asfloat(), rec.prev, d)
    worst = -math.inf
    for i in range(probes):
        mix = None if i % 2 == 0 else Fraction(int(rng.integers(1, 64)), 64)
        p = random_feasible_point(state, rec.leaf, rng, mix)
        worst = max(worst, cur - divergence_arrays(idx.w, p.asfloat(), rec.prev, d))
    ok = bool(separation_oracle(state.x, state.eps_step, delta=True, mass=True))
    return worst, rec.lipschitz * rec.eps_solver, ok
