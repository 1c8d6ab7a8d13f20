import math

import numpy as np
import pytest
from hypothesis import given, settings

from helpers import seeds
from oracles import ball_oracle, box_oracle, project_simplex, quadratic, simplex_oracle
from kserver.antiserver import Cut, ReducedOracle, chi_index, delta_for, lift_leaf_values
from kserver.errors import Infeasible
from kserver.metric import WeightedTree
from kserver.solver import (NearPoint, OracleConvexFunction, OracleConvexSet, SmallVolume,
                            central_cut_ellipsoid, minimize_convex)


def test_ball_near_point():
    K = OracleConvexSet(3, 2.0, ball_oracle(1.0), np.array([1.5, 1.0, 0.5]))
    res = central_cut_ellipsoid(K, 1e-3)
    assert isinstance(res, NearPoint)
    assert np.linalg.norm(res.x) <= 1 + 1e-3


def test_degenerate_box():
    lo, hi = np.zeros(2), np.full(2, 1e-9)
    K = OracleConvexSet(2, 1.0, box_oracle(lo, hi), np.array([0.5, -0.5]))
    res = central_cut_ellipsoid(K, 1e-3)
    if isinstance(res, NearPoint):
        assert box_oracle(lo, hi)(res.x, 1e-3)
    else:
        assert res.log_volume <= 2 * 2 * math.log(1e-3) + 1e-9


def test_simplex_near_point():
    K = OracleConvexSet(4, 2.0, simplex_oracle, np.full(4, 0.9))
    res = central_cut_ellipsoid(K, 1e-3)
    assert isinstance(res, NearPoint)
    x = res.x
    assert x.min() >= -1e-3 and x.sum() <= 1 + 1e-3


def test_empty_set_reports_small_volume():
    def never(y, gamma):
        return Cut(np.ones(len(y)), 1.0, "empty")
    K = OracleConvexSet(2, 1.0, never)
    assert isinstance(central_cut_ellipsoid(K, 1e-2), SmallVolume)


def test_one_dimensional_bisection():
    K = OracleConvexSet(1, 4.0, box_oracle(np.array([2.5]), np.array([2.6])))
    res = central_cut_ellipsoid(K, 1e-4)
    assert isinstance(res, NearPoint) and 2.5 - 1e-4 <= res.x[0] <= 2.6 + 1e-4


def test_norm_over_unit_box():
    d = 3
    K = OracleConvexSet(d, math.sqrt(d), box_oracle(np.zeros(d), np.ones(d)), np.full(d, 0.5))
    x = minimize_convex(quadratic(np.zeros(d), math.sqrt(d)), K, 1e-4)
    assert np.linalg.norm(x) <= 1e-4


@settings(max_examples=12)
@given(seeds)
def test_quadratic_over_box(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 7))
    c = rng.uniform(-1, 2, d)
    K = OracleConvexSet(d, math.sqrt(d), box_oracle(np.zeros(d), np.ones(d)), np.full(d, 0.5))
    x = minimize_convex(quadratic(c, math.sqrt(d)), K, 1e-4)
    assert np.linalg.norm(x - np.clip(c, 0, 1)) <= 1e-4


@settings(max_examples=12)
@given(seeds)
def test_quadratic_over_simplex(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 7))
    c = rng.uniform(0, 1, d) + 1.0 / d  # outside the simplex
    K = OracleConvexSet(d, 1.0, simplex_oracle, np.full(d, 1.0 / (2 * d)))
    x = minimize_convex(quadratic(c, 1.0), K, 1e-4)
    assert np.linalg.norm(x - project_simplex(c)) <= 1e-4


def test_early_exit_does_not_change_the_answer():
    c = np.array([1.2, 0.7, -0.3])
    K = OracleConvexSet(3, 2.0, box_oracle(np.zeros(3), np.ones(3)), np.full(3, 0.5))
    a = minimize_convex(quadratic(c, 2.0), K, 1e-4, early_exit=True)
    b = minimize_convex(quadratic(c, 2.0), K, 1e-4, early_exit=False)
    assert np.linalg.norm(a - b) <= 2e-4


def test_empty_interval_is_infeasible():
    f = quadratic(np.zeros(2), 1.0)
    f.interval = (1.0, 0.0)
    with pytest.raises(Infeasible):
        minimize_convex(f, OracleConvexSet(2, 1.0, box_oracle(np.zeros(2), np.ones(2))), 1e-3)


def test_divergence_projection_returns_the_anchor_when_feasible():
    # two leaves, k = 1: once the first leaf is pinned at delta, the anchor
    # itself is the unique feasible point of the mass condition
    tree = WeightedTree.star(2)
    k = 1
    d = float(delta_for(k))
    idx = chi_index(tree)
    xp = lift_leaf_values(tree, k, [delta_for(k), 1 - delta_for(k)]).asfloat()
    pin = idx.offset[tree.leaves[0]]
    free = np.array([i for i in range(idx.size) if i not in set(idx.root_idx) and i != pin])
    oracle = ReducedOracle(tree, k, xp, free, delta=d, mass=True)
    w = idx.w[free]
    pf = xp[free]

    def value(y):
        return float(np.sum(w * ((y + d) * np.log((y + d) / (pf + d)) - y + pf)))

    f = OracleConvexFunction(value, lambda y: w * np.log((y + d) / (pf + d)),
                             float(np.linalg.norm(w * math.log((1 + d) / d))), float(w.min()) / (1 + d),
                             (0.0, 1.0))
    K = OracleConvexSet(len(free), math.sqrt(len(free)), oracle, np.full(len(free), 0.5))
    y = minimize_convex(f, K, 1e-4)
    assert np.abs(y - pf).max() <= 1e-4
