"""Experiment runner: instance generation, pipeline execution and cost/bit accounting."""

import csv
import io
import json
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from .bits import BitStream
from .discretize import Filtered, Pipeline, min_granularity
from .errors import InstanceTooLarge, InvariantViolation, KServerError, UnknownGenerator
from .fractional import MIN_TAU, FractionalAlgorithm, default_m
from .measure import MassVector
from .metric import MetricSpace, WeightedTree, frt_embed, log2_ceil
from .offline import FLOW_MAX_T, RequestTrace, matching_distance, opt_flow
from .rounding import HSTRounding, draw_index, member_distance

MODES = ("fractional", "barely-fractional", "barely-random", "end-to-end-general-metric", "advice")
GENERATORS = ("uniform", "round-robin", "far-point", "lazy", "file")
STAGE_COLUMNS = ("fractional", "z1", "z2", "z3", "z4", "deferred", "ensemble", "sampled")
COLUMNS = ("t", "request", "forwarded") + STAGE_COLUMNS + tuple(f"cum_{c}" for c in STAGE_COLUMNS) + ("bits",)
MATCHING_MAX_K = 7


# -- instances -------------------------------------------------------------------------

def build_space(params):
    """Tree or metric from generator parameters.

    ``space`` is one of ``star``, ``hst``, ``path``, ``uniform-metric``,
    ``line-metric``, ``random-metric``, ``tree`` (with ``tree`` holding a
    serialized tree) or ``metric`` (with ``dist``).
    """
    kind = params.get("space", "star")
    n = params.get("n", 4)
    if kind == "star":
        return WeightedTree.star(n)
    if kind == "hst":
        return WeightedTree.uniform_hst(params.get("branching", [2, 2]), params.get("tau", 10))
    if kind == "path":
        return WeightedTree.path(n)
    if kind == "tree":
        return WeightedTree.from_dict(params["tree"])
    if kind == "uniform-metric":
        return MetricSpace.uniform(n)
    if kind == "line-metric":
        return MetricSpace.line(n)
    if kind == "random-metric":
        from .metric import random_metric
        return random_metric(n, random.Random(params.get("metric_seed", 0)), params.get("max_dist", 20))
    if kind == "metric":
        return MetricSpace(params["dist"])
    raise UnknownGenerator(f"unknown space {kind!r}")


def _points(space):
    return list(space.leaves) if isinstance(space, WeightedTree) else list(range(space.n))


def far_point_tree(k, tau=MIN_TAU):
    """``k`` leaves under one heavy edge and a single leaf under another."""
    tau = Fraction(tau)
    parent = [None, 0, 0] + [1] * k + [2]
    weight = [0, tau, tau] + [1] * (k + 1)
    return WeightedTree(parent, weight)


def lazy_requests(points, masses, T, serve):
    """Adaptive adversary: request the point with the least current mass (lowest id on ties)."""
    out = []
    for _ in range(T):
        m = masses()
        r = min(points, key=lambda p: (m[p], p))
        out.append(r)
        serve(r)
    return out


def generate(generator, params=None, seed=0) -> RequestTrace:
    """Build a request trace.

    ``params`` holds ``k``, ``T``, the space description (see
    :func:`build_space`) and generator options: ``points`` for round-robin,
    ``tau`` for far-point, ``path`` for file. ``C0`` defaults to the first
    ``k`` points. The lazy generator plays against the fractional algorithm on
    a tree; :func:`run` instead plays it against the stack being evaluated.
    """
    params = dict(params or {})
    if generator == "file":
        return RequestTrace.from_json(Path(params["path"]).read_text())
    if generator not in GENERATORS:
        raise UnknownGenerator(f"unknown generator {generator!r}")
    k, T = params.get("k", 2), params.get("T", 10)
    rng = random.Random(seed)
    if generator == "far-point":
        space = far_point_tree(k, params.get("tau", MIN_TAU))
        cluster, far = list(range(3, 3 + k)), 3 + k
        C0 = [far] + cluster[:k - 1]
        return RequestTrace(space, C0, [cluster[t % k] for t in range(T)])
    space = build_space(params)
    pts = _points(space)
    C0 = list(params.get("C0", pts[:k]))
    if generator == "uniform":
        reqs = [rng.choice(pts) for _ in range(T)]
    elif generator == "round-robin":
        cyc = list(params.get("points", pts[:k + 1]))
        reqs = [cyc[t % len(cyc)] for t in range(T)]
    else:
        if not isinstance(space, WeightedTree):
            raise UnknownGenerator("the standalone lazy generator needs a tree space")
        alg = FractionalAlgorithm(space, k, C0)
        reqs = lazy_requests(pts, lambda: alg.measure.leaf_masses(), T, alg.serve)
    return RequestTrace(space, C0, reqs)


# -- configuration and ledger ----------------------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str = "barely-random"
    generator: str = "uniform"
    params: dict = field(default_factory=dict)
    trace: str | None = None
    k: int = 2
    m: int | None = None
    tau: int | None = None
    eps_step: str | None = None
    seed: int = 0
    rounds: int = 1
    audit: bool = False
    out: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.m is None:
            self.m = default_m(self.k)
        if self.mode != "fractional" and self.m < min_granularity(self.k):
            raise ValueError(f"m = {self.m} is below 2k^2 + k")
        if self.tau is not None and self.tau < MIN_TAU:
            raise ValueError(f"tau = {self.tau} is below {MIN_TAU}")

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class CostLedger:
    """Per-step stage costs with exact running totals."""

    rows: list = field(default_factory=list)
    totals: dict = field(default_factory=lambda: {c: Fraction(0) for c in STAGE_COLUMNS})

    def add(self, t, request, forwarded, costs, bits):
        for c in STAGE_COLUMNS:
            self.totals[c] += costs.get(c, Fraction(0))
        row = {"t": t, "request": request, "forwarded": forwarded, "bits": bits}
        row.update({c: costs.get(c, Fraction(0)) for c in STAGE_COLUMNS})
        row.update({f"cum_{c}": self.totals[c] for c in STAGE_COLUMNS})
        self.rows.append(row)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([str(r[c]) if isinstance(r[c], Fraction) else r[c] for c in COLUMNS])
        return buf.getvalue()

    def to_json(self):
        return json.dumps([{c: (str(r[c]) if isinstance(r[c], Fraction) else r[c]) for c in COLUMNS}
                           for r in self.rows], sort_keys=True)


@dataclass
class RunResult:
    ledger: CostLedger
    summary: dict
    trace: RequestTrace


# -- running ---------------------------------------------------------------------------

def load_trace(cfg: ExperimentConfig) -> RequestTrace | None:
    """Fixed trace for non-adaptive generators; ``None`` for the lazy adversary."""
    if cfg.trace:
        return RequestTrace.from_json(Path(cfg.trace).read_text())
    if cfg.generator == "lazy":
        return None
    params = {"k": cfg.k, **cfg.params}
    return generate(cfg.generator, params, cfg.seed)


class _Stack:
    """The algorithm stack for one mode, driven one request at a time."""

    def __init__(self, cfg, tree, C0, bits):
        self.cfg, self.tree = cfg, tree
        k, m = cfg.k, cfg.m
        self.frac = FractionalAlgorithm(tree, k, C0, cfg.eps_step)
        self.pipe = self.filt = self.rnd = None
        self.index = None
        if cfg.mode != "fractional":
            self.pipe = Pipeline(self.frac, m, audit=cfg.audit)
            self.filt = Filtered(self.pipe)
        if cfg.mode in ("barely-random", "end-to-end-general-metric", "advice"):
            self.rnd = HSTRounding(tree, m, C0)
            start = bits.used
            self.index, self.sample_bits, self.defect = draw_index(m, bits, cfg.rounds)
            assert bits.used - start == self.sample_bits

    def measure(self) -> MassVector:
        return self.frac.measure if self.pipe is None else self.pipe.measure

    def step(self, leaf):
        costs = {}
        f0 = self.frac.cost
        if self.pipe is None:
            self.frac.serve(leaf)
            costs["fractional"] = self.frac.cost - f0
            return costs, True, None
        disc = self.pipe.disc
        c0 = dict(disc.cost)
        _, fwd = self.filt.serve(leaf)
        costs["fractional"] = self.frac.cost - f0
        for s, col in (("z1", "z1"), ("z2", "z2"), ("z3", "z3"), ("z4", "z4"), ("y", "deferred")):
            costs[col] = disc.cost[s] - c0[s]
        moved = None
        if self.rnd is not None:
            before = list(self.rnd.ens.counts[self.index])
            old_member = self.rnd.ens.member(self.index)
            costs["ensemble"] = self.rnd.update(self.pipe.measure)
            costs["sampled"] = member_distance(self.tree, before, self.rnd.ens.counts[self.index])
            moved = (old_member, self.rnd.ens.member(self.index))
            if self.cfg.audit:
                for i, mem in enumerate(self.rnd.ens.members()):
                    if leaf not in mem:
                        raise InvariantViolation(f"member {i} does not serve request {leaf}")
        return costs, fwd, moved


def run(cfg: ExperimentConfig) -> RunResult:
    """Execute one experiment; writes ``ledger.csv`` and ``summary.json`` when ``cfg.out`` is set.

    In the general-metric mode the metric is embedded first and requests are
    mapped to leaves; the sampled member's cost is measured in the metric.
    An invariant violation stops the run and is reported in the summary.
    """
    bits = BitStream(cfg.seed)
    trace = load_trace(cfg)
    space = trace.space if trace is not None else build_space(cfg.params)
    k = trace.k if trace is not None else cfg.k
    if k != cfg.k:
        raise ValueError(f"trace has k = {k}, config has k = {cfg.k}")
    C0 = list(trace.C0) if trace is not None else list(cfg.params.get("C0", _points(space)[:k]))

    emb = None
    if isinstance(space, MetricSpace):
        if cfg.mode != "end-to-end-general-metric":
            raise ValueError("metric instances need the end-to-end-general-metric mode")
        emb = frt_embed(space, cfg.tau or 16, bits)
        tree = emb.hst.tree
        to_leaf = lambda p: emb.leaf_of[p]
    else:
        # a native tree is its own embedding
        tree = space
        to_leaf = lambda p: p
    bits_embed = bits.used

    stack = _Stack(cfg, tree, [to_leaf(p) for p in C0], bits)
    bits_init = bits.used
    ledger = CostLedger()
    metric_cost = Fraction(0)
    violation = None
    requests = []
    pts = _points(space)
    T = cfg.params.get("T", 10) if trace is None else trace.T

    t = 0
    try:
        for t in range(1, T + 1):
            if trace is not None:
                p = trace.requests[t - 1]
            else:
                masses = stack.measure().leaf_masses()
                p = min(pts, key=lambda q: (masses[to_leaf(q)], q))
            requests.append(p)
            costs, fwd, moved = stack.step(to_leaf(p))
            if emb is not None and moved is not None:
                old, new = ([emb.point_of[l] for l in c] for c in moved)
                step = _metric_move(space, old, new)
                metric_cost += step
                costs["sampled"] = step
            ledger.add(t, p, fwd, costs, bits.used)
    except InvariantViolation as e:
        violation = f"step {t}: {e}"

    if trace is None:
        trace = RequestTrace(space, C0, requests)
    summary = _summary(cfg, stack, ledger, trace, violation, bits_embed, bits_init, bits.used)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ledger.csv").write_text(ledger.to_csv())
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "trace.json").write_text(trace.to_json() + "\n")
    return RunResult(ledger, summary, trace)


def _metric_move(space, old, new):
    if len(old) > MATCHING_MAX_K:
        raise InstanceTooLarge(f"k = {len(old)} is too large for exact matching")
    tr = RequestTrace(space, list(old), [])
    return matching_distance(tr, sorted(old), sorted(new))


def _headline(cfg, totals, advised):
    if cfg.mode == "fractional":
        return totals["fractional"]
    if cfg.mode == "barely-fractional":
        return totals["deferred"]
    if cfg.mode == "advice":
        return advised
    return totals["sampled"]


def _summary(cfg, stack, ledger, trace, violation, bits_embed, bits_init, bits_end):
    totals = ledger.totals
    advised = None
    if stack.rnd is not None:
        advised = min(stack.rnd.member_cost)
    cost = _headline(cfg, totals, advised)
    opt = ratio = None
    opt_note = "unavailable"
    if violation is None:
        try:
            if trace.T <= FLOW_MAX_T:
                opt = opt_flow(trace)
                opt_note = "exact"
        except KServerError as e:
            opt_note = f"unavailable: {e}"
    if opt is not None:
        ratio = None if opt == 0 else float(cost / opt)
    s = {
        "config": asdict(cfg),
        "T": trace.T,
        "totals": {c: str(v) for c, v in totals.items()},
        "cost": str(cost) if cost is not None else None,
        "cost_float": float(cost) if cost is not None else None,
        "opt": str(opt) if opt is not None else None,
        "opt_status": opt_note,
        "ratio": ratio,
        "bits": {"embedding": bits_embed, "sampling": bits_init - bits_embed,
                 "after_init": bits_end - bits_embed, "total": bits_end,
                 "budget": log2_ceil(cfg.m) * cfg.rounds if stack.rnd is not None else 0},
        "forwarded": len(stack.filt.forwarded) if stack.filt is not None else trace.T,
        "violations": 0 if violation is None else 1,
        "violation": violation,
    }
    if stack.rnd is not None:
        s["sampled_index"] = stack.index
        s["sampling_defect"] = str(stack.defect)
        s["advised"] = str(advised)
        s["ensemble_ot"] = str(stack.rnd.ot)
        s["hst_ratio"] = float(stack.rnd.cost / stack.rnd.ot) if stack.rnd.ot else None
    integral = cfg.mode in ("barely-random", "end-to-end-general-metric", "advice")
    if integral and opt is not None and cost < opt:
        s["violations"] += 1
        s["violation"] = f"cost {cost} is below OPT {opt}"
    return s
