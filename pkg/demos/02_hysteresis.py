"""Hysteresis absorbs small oscillations of the target.

The grid here is 1/9. A target that wobbles by 1/18 around the current state
never moves it; a push of a full grid unit does.
"""

from fractions import Fraction

from kserver import MassVector, WeightedTree
from kserver.discretize import step2_hysteresis

tree = WeightedTree.star(2)
state = MassVector.from_leaf_masses(tree, [Fraction(5, 9), Fraction(4, 9)])
for shift in (Fraction(1, 18), -Fraction(1, 18), Fraction(1, 18), Fraction(1, 6)):
    target = MassVector.from_leaf_masses(tree, [Fraction(5, 9) + shift, Fraction(4, 9) - shift])
    state = step2_hysteresis(state, target, 9)
    print(f"target shift {str(shift):>5}: state {[str(v) for v in state.leaf_masses().values()]}")
