import random
from fractions import Fraction

import pytest
from hypothesis import given, settings

from helpers import random_hst, random_walk, seeds
from kserver.discretize import (Discretizer, Filtered, UnitTracker, min_granularity, pipeline,
                                step2_hysteresis, step3_scale, step4_sigma)
from kserver.errors import GranularityTooSmall, InvalidMeasure, TrackerInconsistency
from kserver.fractional import FractionalAlgorithm
from kserver.measure import MassVector, ot_distance, validate
from kserver.metric import WeightedTree

F = Fraction


def test_hysteresis_ignores_small_oscillation():
    t = WeightedTree.star(2)
    a, b = t.leaves
    prev = MassVector.from_leaf_masses(t, [F(5, 9), F(4, 9)])
    for d in (F(1, 18), -F(1, 18)):
        target = MassVector.from_leaf_masses(t, [F(5, 9) + d, F(4, 9) - d])
        assert step2_hysteresis(prev, target, 9) == prev


def test_hysteresis_moves_whole_units():
    t = WeightedTree.star(2)
    prev = MassVector.from_leaf_masses(t, [F(5, 9), F(4, 9)])
    target = MassVector.from_leaf_masses(t, [F(5, 9) + F(1, 6), F(4, 9) - F(1, 6)])
    out = step2_hysteresis(prev, target, 9)
    assert out.leaf_masses() == {a: v for a, v in zip(t.leaves, [F(6, 9), F(3, 9)])}


def test_hysteresis_reaches_grid_targets():
    t = WeightedTree.uniform_hst([2, 2], 10)
    L = t.leaves
    prev = MassVector.from_config(t, [L[0], L[1]])
    target = MassVector.from_config(t, [L[2], L[3]])
    assert step2_hysteresis(prev, target, 5) == target


@given(seeds)
def test_hysteresis_properties(seed):
    rng = random.Random(seed)
    tree = random_hst(rng, 8)
    k = rng.randint(1, 3)
    mp = rng.randint(3, 12)
    def rand(denom):
        pm = [0] * tree.n_nodes
        for _ in range(k * denom):
            pm[rng.randrange(tree.n_nodes)] += 1
        return MassVector.from_point_masses(tree, [F(c, denom) for c in pm])
    prev = rand(mp)
    target = rand(rng.randint(1, 3 * mp))
    z2 = step2_hysteresis(prev, target, mp)
    assert z2.is_barely(mp) and z2.mass == k
    assert validate(z2).ok
    assert ot_distance(prev, z2) + ot_distance(z2, target) == ot_distance(prev, target)
    for u in range(tree.n_nodes):
        if u != tree.root:
            assert abs(z2.value(u) - target.value(u)) < F(tree.n_nodes, mp)
    assert step2_hysteresis(z2, target, mp) == z2


def test_scale_and_sigma_k1_m3():
    t = WeightedTree.star(2)
    a, b = t.leaves
    mp = 2 * 3 + 2 + 1
    z2 = MassVector.from_leaf_masses(t, [F(5, 9), F(4, 9)])
    z3 = step3_scale(z2, 1, 3)
    assert z3.leaf_masses() == {a: F(5, 6), b: F(4, 6)}
    assert z3.value(t.root) == F(9, 6)  # lambda = 9/6 = 3/2
    z4 = step4_sigma(z3, 3)
    assert z4.leaf_masses() == {a: F(2, 3), b: F(1, 3)} and z4.mass == 1
    with pytest.raises(GranularityTooSmall):
        step3_scale(z2, 1, 2)
    with pytest.raises(InvalidMeasure):
        step3_scale(MassVector.from_leaf_masses(t, [F(1, 2), F(1, 2)]), 1, 3)
    assert mp == 9


@given(seeds)
def test_scaled_sigma_has_mass_k(seed):
    rng = random.Random(seed)
    tree = random_hst(rng, 8)
    k = rng.randint(1, 3)
    m = min_granularity(k) + rng.randint(0, 5)
    mp = 2 * m + 2 * k + 1
    cnt = {l: 0 for l in tree.leaves}
    for _ in range(k * mp):
        cnt[rng.choice(tree.leaves)] += 1
    z2 = MassVector.from_leaf_masses(tree, {l: F(c, mp) for l, c in cnt.items()})
    z4 = step4_sigma(step3_scale(z2, k, m), m)
    assert validate(z4, "barely", m=m, k=k).ok


def test_tracker_defers_until_a_leaf_is_reached():
    t = WeightedTree.uniform_hst([2, 2], 10)
    L = t.leaves
    start = MassVector.from_config(t, [L[0]])
    tr = UnitTracker(t, 1, start)
    mid = MassVector.from_point_masses(t, {t.parent[L[0]]: 1})
    tr.apply(start, mid)
    assert tr.measure() == start
    end = MassVector.from_config(t, [L[1]])
    tr.apply(mid, end)
    assert tr.measure() == end
    with pytest.raises(TrackerInconsistency):
        tr.apply(start, end)


def test_step5_scripted_case():
    t = WeightedTree.star(3)
    x0 = MassVector.from_config(t, [1])
    d = Discretizer(t, 1, 3, x0, audit=True)
    y = d.push(MassVector.from_config(t, [2]), request=2)
    assert y == MassVector.from_config(t, [2])
    d.push(MassVector.from_config(t, [2]), request=2)
    assert d.cost["y"] == 2
    assert d.cost["x"] == 2


@settings(max_examples=10)
@given(seeds)
def test_pipeline_chain_holds_on_walks(seed):
    rng = random.Random(seed)
    tree = random_hst(rng, 6, max_depth=2)
    k = rng.randint(1, min(2, tree.n))
    start, reqs, measures = random_walk(rng, tree, k, 6, 4)
    d = Discretizer(tree, k, min_granularity(k), MassVector.from_config(tree, start), audit=True)
    for r, x in zip(reqs, measures):
        d.push(x, request=r)
    c = d.cost
    assert c["y"] <= 2 * 2 * 2 * 2 * c["x"]


def test_filter_identity_on_occupied_leaves():
    t = WeightedTree.star(3)
    f = Filtered(pipeline(FractionalAlgorithm(t, 2, [1, 2])))
    for r in (1, 2, 1, 2):
        _, fwd = f.serve(r)
        assert not fwd
    assert f.cost == 0 and f.forwarded == []


def test_filter_far_point():
    t = WeightedTree.star(3)
    f = Filtered(pipeline(FractionalAlgorithm(t, 1, [1])))
    z, fwd = f.serve(3)
    assert fwd and z.value(3) == 1 and f.forwarded == [3]
    _, fwd = f.serve(3)
    assert not fwd
