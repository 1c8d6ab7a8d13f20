"""Random instance builders shared by the test modules."""

from fractions import Fraction

from hypothesis import strategies as st

from kserver.measure import MassVector
from kserver.metric import WeightedTree

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def random_hst(rng, max_leaves=16, tau=10, max_depth=3):
    """Random tau-HST with all leaves at the same depth and at most ``max_leaves`` leaves."""
    while True:
        depth = rng.randint(1, max_depth)
        parent, weight = [None], [Fraction(0)]
        frontier = [0]
        for level in range(depth):
            w = Fraction(tau) ** (depth - 1 - level)
            nxt = []
            for u in frontier:
                for _ in range(rng.randint(1 if level < depth - 1 else 2, 3)):
                    parent.append(u)
                    weight.append(w)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        if 2 <= len(frontier) <= max_leaves:
            return WeightedTree(parent, weight)


def random_config(rng, tree, k, distinct=False):
    leaves = list(tree.leaves)
    if distinct:
        return rng.sample(leaves, k)
    return [rng.choice(leaves) for _ in range(k)]


def random_leaf_measure(rng, tree, mass, denom):
    """Random leaf measure with values in ``(1/denom) N`` and total ``mass``."""
    units = int(Fraction(mass) * denom)
    cnt = {l: 0 for l in tree.leaves}
    leaves = list(tree.leaves)
    for _ in range(units):
        cnt[rng.choice(leaves)] += 1
    return MassVector.from_leaf_masses(tree, {l: Fraction(c, denom) for l, c in cnt.items()})


def random_walk(rng, tree, k, T, denom, serve=True):
    """Synthetic fractional trajectory: ``(requests, measures)`` starting integral.

    Each step moves a few ``1/denom`` units between leaves; with ``serve`` the
    requested leaf is then topped up to mass one from the other leaves.
    """
    leaves = list(tree.leaves)
    start = random_config(rng, tree, k)
    cnt = {l: 0 for l in leaves}
    for l in start:
        cnt[l] += denom
    out, reqs = [], []
    for _ in range(T):
        for _ in range(rng.randint(0, 3)):
            a = rng.choice([l for l in leaves if cnt[l] > 0])
            b = rng.choice(leaves)
            q = rng.randint(1, cnt[a])
            q = min(q, rng.randint(1, denom))
            cnt[a] -= q
            cnt[b] += q
        r = rng.choice(leaves)
        if serve and cnt[r] < denom:
            need = denom - cnt[r]
            for l in sorted(leaves, key=lambda l: -cnt[l]):
                if l == r or not need:
                    continue
                take = min(need, cnt[l])
                cnt[l] -= take
                cnt[r] += take
                need -= take
        reqs.append(r)
        out.append(MassVector.from_leaf_masses(tree, {l: Fraction(c, denom) for l, c in cnt.items()}))
    return start, reqs, out


def random_tree(rng, max_leaves=5, max_depth=3):
    """Random rooted tree (leaf depths may differ) with integer edge weights."""
    while True:
        parent, weight = [None], [0]
        frontier = [(0, 0)]
        leaves = 0
        while frontier:
            u, d = frontier.pop()
            kids = 0 if (d >= max_depth or (d > 0 and rng.random() < 0.4)) else rng.randint(1, 3)
            if kids == 0:
                leaves += 1
            for _ in range(kids):
                parent.append(u)
                weight.append(rng.randint(1, 5))
                frontier.append((len(parent) - 1, d + 1))
        if 1 <= leaves <= max_leaves and len(parent) > 1:
            return WeightedTree(parent, weight)
