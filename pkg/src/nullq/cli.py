"""Command line interface.

Subcommands:

- ``analyze``: fluid allocation, cycle directions, controllability verdict.
- ``simulate``: one trace under a chosen policy, with the representation
  identity check and an optional CSV event dump.
- ``sweep``: the null-probability replication ladder.
- ``overload``: queue growth under inflated arrival rates.
- ``diffusion``: constrained diffusion paths.

Every subcommand takes a YAML network configuration (see the model module
docs for the schema).  Exit status is 2 on an invariant or identity
violation, 1 on bad inputs.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from nullq.cycles import AssignmentMaps
from nullq.diffusion import build_diffusion, simulate_reflected
from nullq.engine import InvariantViolation, RngStreams, run
from nullq.harness import (
    RepresentationError,
    Scenario,
    analyze_network,
    check_representation,
    estimate_null_probability,
    make_policy,
    overloaded_sweep,
    write_manifest,
    write_summary_csv,
)
from nullq.model import load_spec, scale_instance
from nullq.policies import PolicyError


def _fmt_matrix(m) -> str:
    return "\n".join("  [" + "  ".join(str(v) for v in row) + "]" for row in m)


def cmd_analyze(args) -> int:
    spec = load_spec(args.config)
    analysis = analyze_network(spec)
    fluid = analysis.fluid
    print("fluid allocation xi*:")
    print(_fmt_matrix(fluid.xi_star))
    print(f"rho* = {fluid.rho_star}")
    print(f"heavy traffic: {fluid.heavy_traffic}")
    print(f"resource pooling: {fluid.resource_pooling}")
    print(f"basic activities: {sorted(fluid.basic_edges)}")
    print(f"nonbasic activities: {sorted(fluid.nonbasic_edges)}")
    print(analysis.certificate())
    return 0


def cmd_simulate(args) -> int:
    spec = load_spec(args.config)
    analysis = analyze_network(spec)
    maps = AssignmentMaps(analysis.graph, spec.mu)
    instance = scale_instance(spec, analysis.fluid, args.n)
    policy = make_policy(args.policy, instance, analysis.fluid, maps, analysis)
    rng = RngStreams(args.seed, args.replication, spec.class_count)
    trace = run(instance, policy, args.horizon, rng, full_trace=True, check=True)
    residual = check_representation(
        trace, analysis.fluid, maps, analysis.cycles, tolerance=args.tolerance
    )
    print(f"events: {len(trace.times)}")
    print(f"max total queue: {trace.max_queue_total}")
    print(f"max scaled headcount norm: {trace.max_xhat_norm:.4f}")
    print(f"guard exceedances: {trace.guard_exceed_events}")
    print(f"fallback events: {trace.fallback_events}")
    print(f"full-station events: {trace.full_station_events}")
    print(f"representation residual: {residual:.3e}")
    if args.out:
        trace.to_csv(args.out, stride=args.stride)
        print(f"event path written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    spec = load_spec(args.config)
    scenario = Scenario(
        spec=spec,
        policy=args.policy,
        n_values=tuple(args.n),
        epsilon=args.epsilon,
        horizon=args.horizon,
        replications=args.replications,
        master_seed=args.seed,
        workers=args.workers,
        check_invariants=args.check,
    )
    stats = estimate_null_probability(scenario)
    print(f"policy: {stats.policy}  window: [{stats.epsilon}, {stats.horizon}]")
    for s in stats.per_scale:
        zero = (
            f"  p_hat(from 0) = {s.p_hat_from_zero:.3f}"
            if s.p_hat_from_zero is not None
            else ""
        )
        print(
            f"n = {s.n:6d}: p_hat = {s.p_hat:.3f} "
            f"CI [{s.ci[0]:.3f}, {s.ci[1]:.3f}]{zero}  "
            f"max queue = {s.max_queue}  init failures = {s.init_failures}"
        )
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        write_summary_csv(stats, outdir / f"sweep_{stats.policy}.csv")
        write_manifest(scenario, outdir / "manifest.yaml")
        print(f"summary written to {outdir}")
    return 0


def cmd_overload(args) -> int:
    spec = load_spec(args.config)
    factor = Fraction(str(args.factor))
    lam_prime = tuple(factor * lam for lam in spec.lam)
    stats = overloaded_sweep(
        spec,
        lam_prime,
        n=args.n,
        times=args.times,
        replications=args.replications,
        master_seed=args.seed,
        policy=args.policy,
        workers=args.workers,
    )
    print(f"n = {stats.n}, arrival rates scaled by {factor}")
    for t in stats.times:
        print(
            f"t = {t:6.1f}: median e.Y/n = {stats.medians[t]:.4f}  "
            f"positive fraction = {stats.fraction_positive[t]:.2f}"
        )
    print(f"median growth slope: {stats.slope:.4f} per time unit")
    return 0


def cmd_diffusion(args) -> int:
    spec = load_spec(args.config)
    analysis = analyze_network(spec)
    if analysis.chosen is None:
        print(analysis.certificate(), file=sys.stderr)
        return 1
    maps = AssignmentMaps(analysis.graph, spec.mu)
    dspec = build_diffusion(spec, analysis.fluid, maps, analysis.chosen, alpha=args.alpha)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
    path = simulate_reflected(dspec, args.dt, args.horizon, rng)
    totals = path.states.sum(axis=1)
    print(f"steps: {len(path.times) - 1}")
    print(f"initial push beta: {path.eta[0]:.4f}")
    print(f"total pushing eta(T): {path.eta[-1]:.4f}")
    print(f"max e.X over grid: {totals.max():.6f}")
    if args.out:
        header = "time," + ",".join(f"X{i}" for i in range(dspec.dimension)) + ",eta"
        data = np.column_stack([path.times, path.states, path.eta])
        np.savetxt(args.out, data, delimiter=",", header=header, comments="")
        print(f"path written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nullq",
        description="Null-controllability analysis and simulation of "
        "multiclass many-server networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="fluid program and cycle report")
    p.add_argument("config")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("simulate", help="single trace with identity check")
    p.add_argument("config")
    p.add_argument("--policy", default="preemptive",
                   choices=["preemptive", "nonpreemptive", "greedy"])
    p.add_argument("-n", type=int, default=100, help="scale parameter")
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--out", help="CSV event path output")
    p.add_argument("--stride", type=int, default=1)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="null-probability replication ladder")
    p.add_argument("config")
    p.add_argument("--policy", default="preemptive",
                   choices=["preemptive", "nonpreemptive", "greedy"])
    p.add_argument("-n", type=int, nargs="+", default=[50, 200, 800])
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--horizon", type=float, default=5.0)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--check", action="store_true",
                   help="assert integer balance after every event")
    p.add_argument("--out", help="output directory for CSV and manifest")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("overload", help="queue growth above critical load")
    p.add_argument("config")
    p.add_argument("--factor", type=float, default=1.1,
                   help="arrival rate inflation factor")
    p.add_argument("--policy", default="preemptive",
                   choices=["preemptive", "nonpreemptive", "greedy"])
    p.add_argument("-n", type=int, default=400)
    p.add_argument("--times", type=float, nargs="+", default=[5.0, 10.0, 20.0])
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_overload)

    p = sub.add_parser("diffusion", help="constrained diffusion paths")
    p.add_argument("config")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path output")
    p.set_defaults(fn=cmd_diffusion)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (InvariantViolation, RepresentationError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    except (PolicyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
