"""Two leaves, one server, requests alternating between them.

The fractional algorithm projects onto the anti-server polytope after each
request. On this instance every request forces the whole unit of mass across
the star, so its cost tracks the offline optimum step for step.
"""

from kserver import FractionalAlgorithm, RequestTrace, WeightedTree, opt_flow

tree = WeightedTree.star(2)
a, b = tree.leaves
alg = FractionalAlgorithm(tree, 1, [a])
print("initial anti-server point:", [str(v) for v in alg.state.x.x])

requests = [b, a] * 5
for r in requests:
    before = alg.cost
    z, _ = alg.serve(r)
    print(f"request {r}: masses {[str(z.value(l)) for l in tree.leaves]}, step cost {float(alg.cost - before):.3f}")

opt = opt_flow(RequestTrace(tree, [a], requests))
print(f"fractional cost {float(alg.cost):.3f}, offline optimum {opt}")
