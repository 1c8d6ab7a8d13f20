"""Randomized k-server on hierarchically separated trees with few random bits.

The package is organized along the algorithm's stages:

- :mod:`~kserver.metric`, :mod:`~kserver.measure`: trees, metrics, embeddings, transport;
- :mod:`~kserver.antiserver`, :mod:`~kserver.solver`: the anti-server polytope and the ellipsoid solver;
- :mod:`~kserver.fractional`: the fractional algorithm by Bregman projections;
- :mod:`~kserver.discretize`: discretization to ``m``-barely fractional measures;
- :mod:`~kserver.rounding`: ensembles of ``m`` deterministic algorithms and sampling;
- :mod:`~kserver.offline`: exact offline optimum and brute-force oracles;
- :mod:`~kserver.harness`, :mod:`~kserver.cli`: experiments and the command line.
"""

from .bits import BitStream
from .discretize import Discretizer, Filtered, Pipeline, filter_superfluous, pipeline
from .errors import KServerError
from .fractional import FractionalAlgorithm, default_m
from .harness import CostLedger, ExperimentConfig, generate, run
from .measure import MassVector, ot_distance, sigma
from .metric import MetricSpace, TauHST, WeightedTree, config_distance, frt_embed, validate_hst
from .offline import RequestTrace, opt_dp, opt_flow
from .rounding import Ensemble, HSTRounding, advised_cost, round_line, sample

__version__ = "0.1.0"

__all__ = [
    "BitStream", "CostLedger", "Discretizer", "Ensemble", "ExperimentConfig", "Filtered",
    "FractionalAlgorithm", "HSTRounding", "KServerError", "MassVector", "MetricSpace", "Pipeline",
    "RequestTrace", "TauHST", "WeightedTree", "advised_cost", "config_distance", "default_m",
    "filter_superfluous", "frt_embed", "generate", "opt_dp", "opt_flow", "ot_distance", "pipeline",
    "round_line", "run", "sample", "sigma", "validate_hst",
]
