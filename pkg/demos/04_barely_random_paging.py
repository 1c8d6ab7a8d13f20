"""End to end on a uniform metric (paging) against the lazy adversary.

The metric is embedded into an HST, the fractional stage runs on the tree, the
discretization and rounding turn it into m deterministic algorithms, and one
of them is sampled with ceil(log2 m) random bits at the start.
"""

from fractions import Fraction

from kserver.harness import ExperimentConfig, run

cfg = ExperimentConfig(mode="end-to-end-general-metric", generator="lazy", k=2, seed=1,
                       params={"space": "uniform-metric", "n": 3, "T": 60})
s = run(cfg).summary
print(f"sampled member {s['sampled_index']} of m = {cfg.m}")
print(f"cost {s['cost']}, OPT {s['opt']}, ratio {s['ratio']:.2f}")
print(f"random bits: embedding {s['bits']['embedding']}, sampling {s['bits']['sampling']}")
print(f"best member in hindsight (advice) paid {float(Fraction(s['advised'])):.1f} in tree distance")
