"""From fractional to barely fractional: sigma, hysteresis, scaling, deferral.

A fractional trajectory ``x(t)`` of inner measures of mass ``k`` goes through

1. ``z1 = sigma(x)`` element-wise on subtree aggregates,
2. ``z2``: a hysteresis update on the grid ``1/m'`` with ``m' = 2m + 2k + 1``,
3. ``z3 = lambda z2`` with ``lambda = m' / (2m)``,
4. ``z4 = sigma(z3)``, which is ``m``-barely fractional of mass ``k``,
5. ``y``: the moves of ``z4`` replayed on ``k m`` tracked units, a unit only
   changing its actual leaf once its virtual position reaches a leaf.

:func:`filter_superfluous` drops requests the current output already serves.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (GranularityTooSmall, InvalidMeasure, InvariantViolation, NonTermination,
                     TrackerInconsistency)
from .measure import MassVector, _lcm, ot_distance, sigma_map, sigma_num, validate
from .metric import WeightedTree


def min_granularity(k):
    return 2 * k * k + k


def step1_sigma(x: MassVector) -> MassVector:
    return sigma_map(x)


def step2_hysteresis(prev: MassVector, target: MassVector, mp, budget=None) -> MassVector:
    """Hysteresis update of ``prev`` (``mp``-barely) toward ``target``.

    While some edge lets a unit ``1/mp`` move from ``u`` to a neighbour ``v``
    with ``z_[u] >= 1/mp`` and the side of ``u`` holding at least ``1/mp`` more
    than the target there, the unit moves. On a parent-to-child edge the side
    of ``u`` is everything outside the child's subtree, so the test reads
    ``target_v - z_v >= 1/mp``; upward it reads ``z_u - target_u >= 1/mp``.
    Edges are swept in BFS order (down first, then up) until nothing moves;
    all units allowed on an edge move at once.
    """
    tree = prev.tree
    if target.tree is not tree:
        raise InvalidMeasure("measures live on different trees")
    if not prev.is_barely(mp):
        raise InvalidMeasure(f"previous measure is not {mp}-barely fractional")
    M = _lcm(prev.denom, target.denom, mp)
    z = list(prev.with_denom(M).num)
    t = list(target.with_denom(M).num)
    unit = M // mp
    p = [z[u] - sum(z[c] for c in tree.children[u]) for u in range(tree.n_nodes)]
    k = Fraction(prev.num[tree.root], prev.denom)
    if budget is None:
        budget = mp * max(1, int(k) + 1) * max(1, tree.n_nodes - 1)
    moved = 0
    edges = [v for v in tree.bfs if v != tree.root]
    while True:
        changed = False
        for v in edges:
            u = tree.parent[v]
            n_down = min(p[u] // unit, (t[v] - z[v]) // unit) if t[v] > z[v] else 0
            if n_down > 0:
                z[v] += n_down * unit
                p[u] -= n_down * unit
                p[v] += n_down * unit
                moved += n_down
                changed = True
            n_up = min(p[v] // unit, (z[v] - t[v]) // unit) if z[v] > t[v] else 0
            if n_up > 0:
                z[v] -= n_up * unit
                p[v] -= n_up * unit
                p[u] += n_up * unit
                moved += n_up
                changed = True
        if moved > budget:
            raise NonTermination(f"hysteresis exceeded {budget} unit moves")
        if not changed:
            break
    return MassVector(tree, M, z).reduced()


def step3_scale(z2: MassVector, k, m) -> MassVector:
    """Scale by ``lambda = m'/(2m)``: a value ``j/m'`` becomes ``j/(2m)``."""
    if m < min_granularity(k):
        raise GranularityTooSmall(f"m = {m} is below 2k^2 + k = {min_granularity(k)}")
    mp = 2 * m + 2 * k + 1
    z = z2.with_denom(mp) if mp % z2.denom == 0 else None
    if z is None:
        raise InvalidMeasure(f"input is not {mp}-barely fractional")
    return MassVector(z2.tree, 2 * m, z.num).reduced()


def step4_sigma(z3: MassVector, m) -> MassVector:
    if not z3.is_barely(2 * m):
        raise InvalidMeasure(f"input is not {2 * m}-barely fractional")
    M = 2 * m
    z = z3.with_denom(M)
    return MassVector(z3.tree, M, [sigma_num(a, M) for a in z.num]).reduced()


class UnitTracker:
    """``k m`` mass units, each with a virtual node and an actual leaf."""

    def __init__(self, tree: WeightedTree, m, z4: MassVector):
        if not z4.is_leaf_measure() or not z4.is_barely(m):
            raise TrackerInconsistency("tracker must start from an m-barely leaf measure")
        self.tree, self.m = tree, m
        self.virtual, self.actual = [], []
        z = z4.with_denom(m) if m % z4.denom == 0 else z4.with_denom(_lcm(m, z4.denom))
        scale = z.denom // m
        for l in tree.leaves:
            cnt = z.point_num(l) // scale
            self.virtual.extend([l] * cnt)
            self.actual.extend([l] * cnt)
        self.at = {u: [] for u in range(tree.n_nodes)}
        for i, v in enumerate(self.virtual):
            self.at[v].append(i)

    def _move(self, i, dest):
        self.at[self.virtual[i]].remove(i)
        self.virtual[i] = dest
        self.at[dest].append(i)
        if self.tree.is_leaf(dest) and self.actual[i] != dest:
            self.actual[i] = dest

    def apply(self, old: MassVector, new: MassVector):
        """Replay the edge flows between two ``m``-barely measures."""
        tree, m = self.tree, self.m
        M = _lcm(old.denom, new.denom, m)
        a, b = old.with_denom(M).num, new.with_denom(M).num
        scale = M // m
        flow = {}
        for v in range(tree.n_nodes):
            if v == tree.root:
                continue
            d = b[v] - a[v]
            if d % scale:
                raise TrackerInconsistency("flows are not whole units")
            flow[v] = d // scale
        for v in tree.postorder:
            if v == tree.root or flow[v] >= 0:
                continue
            need = -flow[v]
            here = sorted(self.at[v])
            if len(here) < need:
                raise TrackerInconsistency(f"only {len(here)} units at node {v}, {need} must leave")
            for i in here[:need]:
                self._move(i, tree.parent[v])
        for u in tree.bfs:
            for c in tree.children[u]:
                need = flow[c]
                if need <= 0:
                    continue
                here = sorted(self.at[u], key=lambda i: (not tree.in_subtree(self.actual[i], c), i))
                if len(here) < need:
                    raise TrackerInconsistency(f"only {len(here)} units at node {u}, {need} must enter {c}")
                for i in here[:need]:
                    self._move(i, c)

    def measure(self) -> MassVector:
        cnt = {l: 0 for l in self.tree.leaves}
        for l in self.actual:
            cnt[l] += 1
        return MassVector.from_leaf_masses(self.tree, {l: Fraction(c, self.m) for l, c in cnt.items()})

    def virtual_measure(self) -> MassVector:
        pm = [0] * self.tree.n_nodes
        for v in self.virtual:
            pm[v] += 1
        return MassVector.from_point_masses(self.tree, [Fraction(c, self.m) for c in pm])


STAGES = ("x", "z1", "z2", "z3", "z4", "y")


@dataclass
class StepReport:
    t: int
    costs: dict
    measures: dict = field(repr=False)


class Discretizer:
    """Online composition of the five stages, fed one fractional measure per step.

    ``x0`` must be integral (a configuration). With ``audit=True`` every
    per-step invariant is checked and a violation raises
    :class:`InvariantViolation` naming the step.
    """

    def __init__(self, tree: WeightedTree, k, m, x0: MassVector, *, audit=False, keep=False):
        if m < min_granularity(k):
            raise GranularityTooSmall(f"m = {m} is below 2k^2 + k = {min_granularity(k)}")
        if x0.denom != 1 and x0.reduced().denom != 1:
            raise InvalidMeasure("the trajectory must start from an integral measure")
        self.tree, self.k, self.m = tree, k, m
        self.mp = 2 * m + 2 * k + 1
        x0 = x0.reduced()
        self.cur = {s: x0 for s in STAGES}
        self.cur["z3"] = step3_scale(x0, k, m)
        if step4_sigma(self.cur["z3"], m) != x0:
            raise InvalidMeasure("integral start is not fixed by the scaling stages")
        self.cost = {s: Fraction(0) for s in STAGES}
        self.tracker = UnitTracker(tree, m, x0)
        self.audit = audit
        self.keep = keep
        self.history = []
        self.t = 0

    @property
    def measure(self):
        return self.cur["y"]

    def push(self, x: MassVector, request=None) -> MassVector:
        self.t += 1
        k, m, mp = self.k, self.m, self.mp
        new = {"x": x}
        new["z1"] = step1_sigma(x)
        new["z2"] = step2_hysteresis(self.cur["z2"], new["z1"], mp)
        new["z3"] = step3_scale(new["z2"], k, m)
        new["z4"] = step4_sigma(new["z3"], m)
        self.tracker.apply(self.cur["z4"], new["z4"])
        new["y"] = self.tracker.measure()
        step_cost = {s: ot_distance(self.cur[s], new[s]) for s in STAGES}
        prev = self.cur
        self.cur = new
        for s in STAGES:
            self.cost[s] += step_cost[s]
        if self.audit:
            self._check(prev, new, request)
        if self.keep:
            self.history.append(StepReport(self.t, step_cost, new))
        return new["y"]

    def _check(self, prev, new, request):
        t = self.t
        k, mp = self.k, self.mp

        def fail(msg):
            raise InvariantViolation(f"step {t}: {msg}")

        z1, z2 = new["z1"], new["z2"]
        if not validate(z2, "barely", m=mp, k=k).ok:
            fail("z2 is not an m'-barely measure of mass k")
        lhs = ot_distance(prev["z2"], z2) + ot_distance(z2, z1)
        if lhs != ot_distance(prev["z2"], z1):
            fail("hysteresis optimality identity")
        floor = Fraction(2 * k + 1, mp)
        for u in range(self.tree.n_nodes):
            if z2.value(u) < z1.value(u) - floor:
                fail(f"mass floor at node {u}")
        if not validate(new["z4"], "barely", m=self.m, k=k).ok:
            fail("z4 is not m-barely of mass k")
        y = new["y"]
        if not validate(y, "leaf", k=k).ok or not y.is_barely(self.m):
            fail("deferred measure is not an m-barely leaf measure of mass k")
        if self.tracker.virtual_measure() != new["z4"]:
            fail("tracker does not aggregate to z4")
        c = self.cost
        chain = [("z1", "x", 2), ("z2", "z1", 1), ("z3", "z2", 2), ("z4", "z3", 2), ("y", "z4", 1)]
        for a, b, f in chain:
            if c[a] > f * c[b]:
                fail(f"cumulative cost of {a} exceeds {f} x {b}")
        if request is not None and new["x"].value(request) >= 1 and y.value(request) < 1:
            fail(f"request {request} served by x but not by y")

    def dump(self):
        """Per-step stage costs and measures as JSON lines (needs ``keep=True``)."""
        lines = []
        for r in self.history:
            lines.append(json.dumps({
                "t": r.t,
                "costs": {s: str(v) for s, v in r.costs.items()},
                "measures": {s: [str(v) for v in z.values()] for s, z in r.measures.items()},
            }, sort_keys=True))
        return "\n".join(lines)


class Pipeline:
    """Fractional source followed by the discretization stages.

    ``source`` needs ``tree``, ``k``, ``measure`` (current output) and a
    ``serve(leaf)`` returning ``(measure, source)`` like
    :func:`kserver.fractional.serve` bound to a state.
    """

    def __init__(self, source, m=None, *, audit=False, keep=False):
        self.source = source
        k = source.k
        self.disc = Discretizer(source.tree, k, m or min_granularity(k), source.measure,
                                audit=audit, keep=keep)

    @property
    def tree(self):
        return self.source.tree

    @property
    def k(self):
        return self.source.k

    @property
    def m(self):
        return self.disc.m

    @property
    def measure(self):
        return self.disc.measure

    @property
    def cost(self):
        return self.disc.cost["y"]

    def serve(self, leaf):
        x, _ = self.source.serve(leaf)
        return self.disc.push(x, request=leaf)


def pipeline(source, m=None, **kw) -> Pipeline:
    return Pipeline(source, m, **kw)


class Filtered:
    """Drop requests the wrapped algorithm already serves with mass at least one."""

    def __init__(self, inner):
        self.inner = inner
        self.forwarded = []
        self.T = 0
        self.cost = Fraction(0)

    @property
    def measure(self):
        return self.inner.measure

    def serve(self, leaf):
        """Returns ``(measure, forwarded)``."""
        self.T += 1
        before = self.inner.measure
        if before.value(leaf) >= 1:
            return before, False
        out = self.inner.serve(leaf)
        self.forwarded.append(leaf)
        self.cost += ot_distance(before, self.inner.measure)
        return out, True


def filter_superfluous(inner) -> Filtered:
    return Filtered(inner)
