"""Exact inner/leaf measures on trees, the sigma map and tree transport distance.

A :class:`MassVector` stores subtree aggregates ``z_u`` as integer numerators
over one common denominator ``M``; point masses ``z_[u]`` are derived.
"""

import json
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidMeasure, MassMismatch, TreeMismatch
from .metric import WeightedTree


def _lcm(*xs):
    out = 1
    for x in xs:
        out = out * x // math.gcd(out, x)
    return out


class MassVector:
    """Subtree-aggregate mass vector ``z_u = num[u] / denom``."""

    __slots__ = ("tree", "denom", "num")

    def __init__(self, tree: WeightedTree, denom: int, num):
        if denom <= 0:
            raise InvalidMeasure("denominator must be positive")
        num = tuple(int(a) for a in num)
        if len(num) != tree.n_nodes:
            raise InvalidMeasure("one numerator per node is required")
        self.tree = tree
        self.denom = int(denom)
        self.num = num

    # -- constructors ----------------------------------------------------------
    @classmethod
    def from_values(cls, tree, values):
        """Aggregates given as rationals, one per node."""
        vals = [Fraction(v) for v in values]
        M = _lcm(*(v.denominator for v in vals))
        return cls(tree, M, [v.numerator * (M // v.denominator) for v in vals])

    @classmethod
    def from_point_masses(cls, tree, point):
        """Build aggregates from per-node point masses (list or dict)."""
        if isinstance(point, dict):
            point = [point.get(u, 0) for u in range(tree.n_nodes)]
        pm = [Fraction(v) for v in point]
        agg = list(pm)
        for u in tree.postorder:
            p = tree.parent[u]
            if p is not None:
                agg[p] += agg[u]
        return cls.from_values(tree, agg)

    @classmethod
    def from_leaf_masses(cls, tree, masses):
        """``masses`` maps leaf -> mass (or is aligned with ``tree.leaves``)."""
        if not isinstance(masses, dict):
            masses = dict(zip(tree.leaves, masses))
        for u in masses:
            if not tree.is_leaf(u):
                raise InvalidMeasure(f"node {u} is not a leaf")
        return cls.from_point_masses(tree, masses)

    @classmethod
    def from_config(cls, tree, config):
        return cls(tree, 1, tree.counts(config))

    # -- accessors -------------------------------------------------------------
    @property
    def mass(self):
        return Fraction(self.num[self.tree.root], self.denom)

    def value(self, u):
        return Fraction(self.num[u], self.denom)

    def values(self):
        return [Fraction(a, self.denom) for a in self.num]

    def point_num(self, u):
        return self.num[u] - sum(self.num[c] for c in self.tree.children[u])

    def point_mass(self, u):
        return Fraction(self.point_num(u), self.denom)

    def point_masses(self):
        return [self.point_mass(u) for u in range(self.tree.n_nodes)]

    def leaf_masses(self):
        return {l: self.value(l) for l in self.tree.leaves}

    def with_denom(self, M):
        """Same measure written over denominator ``M`` (must be a multiple)."""
        if M % self.denom:
            raise InvalidMeasure(f"{M} is not a multiple of {self.denom}")
        f = M // self.denom
        return MassVector(self.tree, M, [a * f for a in self.num])

    def reduced(self):
        g = self.denom
        for a in self.num:
            g = math.gcd(g, a)
        if g <= 1:
            return self
        return MassVector(self.tree, self.denom // g, [a // g for a in self.num])

    def is_barely(self, m):
        """True when every value is a multiple of ``1/m``."""
        return all((a * m) % self.denom == 0 for a in self.num)

    def is_leaf_measure(self):
        return all(self.point_num(u) == 0 for u in range(self.tree.n_nodes) if not self.tree.is_leaf(u))

    def __eq__(self, other):
        if not isinstance(other, MassVector) or other.tree is not self.tree:
            return NotImplemented
        return all(a * other.denom == b * self.denom for a, b in zip(self.num, other.num))

    def __hash__(self):
        r = self.reduced()
        return hash((id(self.tree), r.denom, r.num))

    def __repr__(self):
        vals = ", ".join(str(v) for v in self.values())
        return f"MassVector([{vals}])"

    def to_json(self):
        return json.dumps({"denominator": self.denom, "numerators": list(self.num)}, sort_keys=True)


def _same_tree(a, b):
    if a.tree is b.tree:
        return True
    ta, tb = a.tree, b.tree
    return ta.parent == tb.parent and ta.weight == tb.weight


def common(z, z2):
    """Integer numerators of both measures over their lcm denominator."""
    M = _lcm(z.denom, z2.denom)
    fa, fb = M // z.denom, M // z2.denom
    return M, [a * fa for a in z.num], [b * fb for b in z2.num]


def ot_distance(z: MassVector, z2: MassVector) -> Fraction:
    """Tree transport distance ``sum_{u != r} w_u |z_u - z'_u|``."""
    if not _same_tree(z, z2):
        raise TreeMismatch("measures live on different trees")
    if z.mass != z2.mass:
        raise MassMismatch(f"masses {z.mass} and {z2.mass} differ")
    M, a, b = common(z, z2)
    tree = z.tree
    total = Fraction(0)
    for u in range(tree.n_nodes):
        if u != tree.root and a[u] != b[u]:
            total += tree.weight[u] * abs(a[u] - b[u])
    return total / M


def sigma(x) -> Fraction:
    """Piecewise-linear map that is flat on ``[l, l+1/2]`` and slope 2 on ``[l+1/2, l+1]``."""
    x = Fraction(x)
    if x < 0:
        raise ValueError("sigma is defined on non-negative reals")
    fl = x.numerator // x.denominator
    return fl + 2 * max(x - fl - Fraction(1, 2), Fraction(0))


def sigma_num(a, M):
    """Numerator of ``sigma(a/M)`` over the same denominator ``M``."""
    q, r = divmod(a, M)
    return q * M + max(2 * r - M, 0)


def sigma_map(z: MassVector) -> MassVector:
    """Element-wise sigma on the aggregates of an inner measure."""
    rep = validate(z, "inner")
    if not rep.ok:
        raise InvalidMeasure(str(rep))
    return MassVector(z.tree, z.denom, [sigma_num(a, z.denom) for a in z.num]).reduced()


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    rule: str = ""
    node: int | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "ok"
        return f"{self.rule} at node {self.node}: {self.detail}"


OK = ValidationReport(True)


def validate(z: MassVector, kind="inner", m=None, k=None) -> ValidationReport:
    """Check measure invariants and report the first violation.

    ``kind`` is ``"inner"``, ``"leaf"`` or ``"barely"`` (the latter needs ``m``).
    When ``k`` is given the root mass must equal it. Never raises.
    """
    tree = z.tree
    if k is not None and z.mass != Fraction(k):
        return ValidationReport(False, "RootMass", tree.root, f"z_r = {z.mass}, expected {k}")
    for u in tree.bfs:
        if z.num[u] < 0:
            return ValidationReport(False, "Negative", u, f"z_u = {z.value(u)}")
        pn = z.point_num(u)
        if pn < 0:
            return ValidationReport(False, "Superadditivity", u,
                                    f"z_u = {z.value(u)} below sum of children")
        if kind == "leaf" and pn != 0 and not tree.is_leaf(u):
            return ValidationReport(False, "InternalMass", u, f"z_[u] = {z.point_mass(u)}")
        if kind == "barely":
            if m is None:
                raise ValueError("barely validation needs m")
            if (z.num[u] * m) % z.denom:
                return ValidationReport(False, "Granularity", u,
                                        f"z_u = {z.value(u)} not a multiple of 1/{m}")
    return OK
