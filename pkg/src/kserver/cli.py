"""Command-line entry point: ``kserver run | generate | opt | audit``."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import KServerError
from .harness import GENERATORS, MODES, ExperimentConfig, generate, run
from .offline import RequestTrace, opt_dp, opt_flow

EXIT_VIOLATION = 2
EXIT_ERROR = 1


def _config(args) -> ExperimentConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in ("mode", "seed", "k", "m", "tau", "trace", "out", "generator"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "audit", False):
        base["audit"] = True
    params = dict(base.get("params", {}))
    for key in ("T", "n", "space"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    base["params"] = params
    return ExperimentConfig(**base)


def _emit(obj, fmt, out=None):
    out = out or sys.stdout
    if fmt == "json":
        out.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    else:
        for k, v in obj.items():
            out.write(f"{k},{json.dumps(v) if isinstance(v, (dict, list)) else v}\n")


def cmd_run(args):
    cfg = _config(args)
    res = run(cfg)
    if args.format == "csv":
        sys.stdout.write(res.ledger.to_csv())
    else:
        _emit(res.summary, "json")
    return EXIT_VIOLATION if res.summary["violations"] else 0


def cmd_generate(args):
    params = json.loads(Path(args.config).read_text()).get("params", {}) if args.config else {}
    params.setdefault("k", args.k or 2)
    for key in ("T", "n", "space"):
        v = getattr(args, key)
        if v is not None:
            params[key] = v
    if args.trace:
        params["path"] = args.trace
    trace = generate(args.generator, params, args.seed or 0)
    text = trace.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_opt(args):
    trace = RequestTrace.from_json(Path(args.trace).read_text())
    res = {"T": trace.T, "k": trace.k, "opt_flow": str(opt_flow(trace))}
    if args.check:
        res["opt_dp"] = str(opt_dp(trace))
    _emit(res, args.format)
    return 0 if not args.check or res["opt_dp"] == res["opt_flow"] else EXIT_VIOLATION


def cmd_audit(args):
    """Run with per-step invariant checks and a projection audit of the fractional stage."""
    from .fractional import FractionalAlgorithm, audit_projection

    cfg = _config(args)
    cfg.audit = True
    res = run(cfg)
    report = {"violations": res.summary["violations"], "violation": res.summary["violation"],
              "T": res.summary["T"]}
    trace = res.trace
    if hasattr(trace.space, "leaves") and args.projection:
        alg = FractionalAlgorithm(trace.space, trace.k, trace.C0, cfg.eps_step, record=True)
        rng = np.random.default_rng(cfg.seed)
        worst = None
        for r in trace.requests[: args.projection]:
            alg.serve(r)
            if alg.state.last is None:
                continue
            gap, bound, ok = audit_projection(alg.state, rng)
            if not ok or gap > bound:
                report["violations"] += 1
                report["violation"] = f"projection audit failed at request {r}"
            worst = gap if worst is None else max(worst, gap)
        report["projection_worst_gap"] = worst
    _emit(report, args.format)
    return EXIT_VIOLATION if report["violations"] else 0


def parser():
    p = argparse.ArgumentParser(prog="kserver", description="Randomized k-server experiments on HSTs.")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(q):
        q.add_argument("--config", help="JSON experiment config")
        q.add_argument("--seed", type=int)
        q.add_argument("--k", type=int)
        q.add_argument("--trace", help="trace JSON file")
        q.add_argument("--out")
        q.add_argument("--format", choices=("csv", "json"), default="json")
        q.add_argument("--T", type=int, help="number of requests for generated traces")
        q.add_argument("--n", type=int, help="number of points for generated spaces")
        q.add_argument("--space", help="star, hst, path, uniform-metric, line-metric, random-metric")

    for name in ("run", "audit"):
        q = sub.add_parser(name)
        common(q)
        q.add_argument("--mode", choices=MODES)
        q.add_argument("--m", type=int)
        q.add_argument("--tau", type=int)
        q.add_argument("--generator", choices=GENERATORS)
        q.add_argument("--audit", action="store_true", help="per-step invariant checks")
        if name == "audit":
            q.add_argument("--projection", type=int, default=0,
                           help="also audit the first N projections against random feasible probes")
    q = sub.add_parser("generate")
    common(q)
    q.add_argument("--generator", choices=GENERATORS, default="uniform")
    q = sub.add_parser("opt")
    q.add_argument("--trace", required=True)
    q.add_argument("--check", action="store_true", help="cross-check against the configuration DP")
    q.add_argument("--format", choices=("csv", "json"), default="json")
    return p


def main(argv=None):
    args = parser().parse_args(argv)
    handler = {"run": cmd_run, "generate": cmd_generate, "opt": cmd_opt, "audit": cmd_audit}[args.cmd]
    try:
        return handler(args)
    except (KServerError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
