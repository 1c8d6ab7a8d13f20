"""Independent oracles shared by the unit and acceptance tests."""

import itertools
from fractions import Fraction

import numpy as np

from kserver.antiserver import Cut, Feasible, chi_index, lift_leaf_values
from kserver.measure import MassVector, ot_distance
from kserver.solver import OracleConvexFunction


def exhaustive_violation(tree, k, x, delta=None):
    """Largest violation over the box, root and leaf-floor rows and every subset of every chi_u."""
    idx = chi_index(tree)
    worst = max(max(-v for v in x), max(v - 1 for v in x))
    for j in range(k + 1, tree.n_leaves_below[tree.root] + 1):
        worst = max(worst, 1 - x[idx.coord(tree.root, j)])
    if delta is not None:
        for l in tree.leaves:
            worst = max(worst, delta - x[idx.offset[l]])
    for u in idx.internal:
        chi_u = [int(c) for c in idx.child_idx[u]]
        for size in range(1, len(chi_u) + 1):
            own = sum(x[idx.coord(u, i)] for i in range(1, size + 1))
            for S in itertools.combinations(chi_u, size):
                worst = max(worst, own - sum(x[c] for c in S))
    return worst


def random_point(rng, tree, k):
    idx = chi_index(tree)
    grid = [Fraction(i, 6) for i in range(7)]
    if rng.random() < 0.5:
        return [rng.choice(grid) for _ in range(idx.size)]
    # near-feasible: lift random leaf values and perturb a few coordinates
    x = list(lift_leaf_values(tree, k, [rng.choice(grid) for _ in tree.leaves]).x)
    for _ in range(rng.randint(0, 3)):
        i = rng.randrange(idx.size)
        x[i] = rng.choice(grid)
    return x


def ball_oracle(radius):
    def oracle(y, gamma):
        r = float(np.linalg.norm(y))
        if r <= radius + gamma:
            return Feasible
        return Cut(y / np.abs(y).max(), r - radius, "ball")
    return oracle


def box_oracle(lo, hi):
    def oracle(y, gamma):
        i = int(np.argmax(np.maximum(lo - y, y - hi)))
        v = max(lo[i] - y[i], y[i] - hi[i])
        if v <= gamma:
            return Feasible
        c = np.zeros(len(y))
        c[i] = 1.0 if y[i] > hi[i] else -1.0
        return Cut(c, v, "box")
    return oracle


def simplex_oracle(y, gamma):
    """``{x >= 0, sum x <= 1}``."""
    i = int(np.argmin(y))
    worst, c = -y[i], None
    if worst > gamma:
        c = np.zeros(len(y))
        c[i] = -1.0
    s = y.sum() - 1
    if s > gamma and s > worst:
        worst, c = s, np.ones(len(y))
    return Feasible if c is None else Cut(c, worst, "simplex")


def project_simplex(c):
    """Euclidean projection onto ``{x >= 0, sum x <= 1}`` (sort-based closed form)."""
    p = np.maximum(c, 0)
    if p.sum() <= 1:
        return p
    u = np.sort(c)[::-1]
    css = np.cumsum(u)
    rho = max(j for j in range(len(c)) if u[j] - (css[j] - 1) / (j + 1) > 0)
    theta = (css[rho] - 1) / (rho + 1)
    return np.maximum(c - theta, 0)


def quadratic(c, radius):
    return OracleConvexFunction(
        value=lambda x: float(np.sum((x - c) ** 2)),
        gradient=lambda x: 2 * (x - c),
        lipschitz=2 * (float(np.linalg.norm(c)) + radius),
        alpha=2.0,
        interval=(0.0, float(np.sum(c ** 2)) + 4 * radius * radius),
    )


def compositions(total, parts):
    """All ways to write ``total`` as an ordered sum of ``parts`` non-negative integers."""
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield out


def hysteresis_argmin(prev, target, mp):
    """Exhaustive minimizer of ``OT(prev, z) + OT(z, target)`` over ``mp``-barely inner measures.

    Ties go to the largest ``OT(prev, z)``. Returns ``(key, minimizers)`` with
    ``key = (objective, -OT(prev, z))``.
    """
    tree = prev.tree
    best_key, best = None, []
    for pm in compositions(int(prev.mass * mp), tree.n_nodes):
        z = MassVector.from_point_masses(tree, [Fraction(c, mp) for c in pm])
        a = ot_distance(prev, z)
        key = (a + ot_distance(z, target), -a)
        if best_key is None or key < best_key:
            best_key, best = key, [z]
        elif key == best_key:
            best.append(z)
    return best_key, best
