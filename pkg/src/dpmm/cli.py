"""Command-line front end.

Subcommands: ``gen`` (write a seeded problem + topology), ``oracle``
(solve a problem file centrally), ``run`` (full experiment pipeline),
``check-params`` (validate parameter ranges against a graph), ``rates``
(windowed rate report from a trace CSV), ``invariants`` (re-run an
experiment deterministically with per-round invariant checking).  The
worker count defaults to the ``DPMM_WORKERS`` environment variable.
"""

import argparse
import os
import sys

import numpy as np

from . import oracle as oracle_mod
from .engine import AlgorithmParams, ParameterError, validate_params
from .experiments import (
    DEFAULTS,
    ExperimentConfig,
    StageError,
    build_network,
    generate,
    run_experiment,
)
from .graphs import read_topology, write_topology
from .observer import IterationTrace, rate_analysis
from .problems import read_problem, write_problem


def _workers_default():
    return int(os.environ.get("DPMM_WORKERS", "1"))


def _add_problem_flags(p):
    p.add_argument("--example", choices=["1", "2", "structural"], default="2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=None, help="number of agents")
    p.add_argument("--n", type=int, default=3, help="per-agent dimension")
    p.add_argument("--p", type=int, default=3, help="equality rows")
    p.add_argument("--q", type=int, default=1, help="inequality rows")


def _kind(example):
    return {"1": "example1", "2": "example2", "structural": "structural"}[example]


def _add_run_flags(p):
    p.add_argument("--rounds", type=int, default=1000)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--schedule", default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--graph", default=None, help="topology file")
    p.add_argument("--edges", type=int, default=None)
    p.add_argument("--mixing", choices=["scaled-metropolis", "laplacian"],
                   default="scaled-metropolis")
    p.add_argument("--nu", type=float, default=2.0)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=_workers_default())


def _config_from_args(args):
    kind = _kind(args.example)
    cfg = ExperimentConfig(
        kind=kind,
        m=args.m if args.m is not None else (10 if kind == "structural" else 20),
        n=args.n,
        p=args.p,
        q=args.q,
        seed=args.seed,
        edges=args.edges,
        graph_file=args.graph,
        mixing_kind=args.mixing,
        nu=args.nu,
        theta=args.theta,
        alpha=args.alpha,
        gamma=args.gamma,
        beta=args.beta,
        rounds=args.rounds,
        tol=args.tol,
        workers=args.workers,
        out=args.out,
    )
    if args.schedule:
        cfg.schedule = args.schedule
    return cfg


def cmd_gen(args):
    kind = _kind(args.example)
    m = args.m if args.m is not None else (10 if kind == "structural" else 20)
    problem = generate(kind, m, args.n, args.p, args.q, args.seed)
    write_problem(problem, args.out)
    print(f"wrote {args.out} ({kind}, m={m}, seed={args.seed})")
    if args.graph_out:
        topology, _ = build_network(m, edges=args.edges, seed=args.seed)
        write_topology(topology, args.graph_out)
        print(f"wrote {args.graph_out}")
    return 0


def cmd_oracle(args):
    problem = read_problem(args.problem)
    solution = oracle_mod.solve_reference(
        problem, tol=args.tol, cache_dir=args.cache
    )
    print(
        f"objective {solution.f_star!r}  kkt {solution.kkt_residual:.3e}  "
        f"iterations {solution.iterations}"
    )
    if args.out:
        directory, name = os.path.split(args.out)
        oracle_mod.store_solution(
            problem, solution, directory or ".",
            name=name[:-5] if name.endswith(".json") else name,
        )
        print(f"wrote {args.out}")
    return 0


def cmd_run(args):
    cfg = _config_from_args(args)
    try:
        result = run_experiment(cfg)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    last = result.run.trace.rows[-1]
    print(
        f"rounds {result.run.rounds}  converged {result.run.converged}  "
        f"objective_residual {last.objective_residual:.3e}  "
        f"eq {last.eq_violation:.3e}  ineq {last.ineq_violation:.3e}  "
        f"consensus {last.consensus_error:.3e}  foo {last.foo_residual:.3e}"
    )
    for msg in result.messages:
        print(msg)
    if cfg.out:
        print(f"outputs in {cfg.out}")
    return result.status


def cmd_check_params(args):
    if args.graph:
        topology = read_topology(args.graph)
        _, mixing = build_network(
            topology.node_count, mixing_kind=args.mixing, nu=args.nu,
            topology=topology,
        )
        m = topology.node_count
    else:
        m = args.m if args.m is not None else 20
        _, mixing = build_network(
            m, edges=args.edges, seed=args.seed,
            mixing_kind=args.mixing, nu=args.nu,
        )
    base = DEFAULTS["example2"]
    params = AlgorithmParams.from_scalars(
        m,
        args.theta if args.theta is not None else base["theta"],
        args.alpha if args.alpha is not None else base["alpha"],
        args.gamma if args.gamma is not None else base["gamma"],
        args.beta if args.beta is not None else base["beta"],
    )
    try:
        validate_params(params, mixing)
    except ParameterError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    print(
        "valid: theta in (0,2), alpha,gamma,beta > 0, "
        f"max gamma*beta*lambda_max = "
        f"{params.gamma.max() * params.beta * mixing.exact_lambda_max:.6g} < 1"
    )
    return 0


def cmd_rates(args):
    trace = IterationTrace.from_csv(args.trace)
    cert = rate_analysis(
        trace, windows=args.windows, min_rounds=args.min_rounds
    )
    print(cert.summary(), end="")
    return 0 if cert.successive_decreasing and cert.foo_decreasing else 1


def cmd_invariants(args):
    cfg = _config_from_args(args)
    cfg.fejer = args.fejer
    try:
        result = run_experiment(cfg)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(f"rounds {result.run.rounds}")
    if result.status == 0:
        print("invariants: all per-round checks passed")
        if args.fejer:
            slacks = result.run.trace.column("fejer_slack")
            print(f"descent slack minimum {np.nanmin(slacks):.3e}")
    else:
        print("invariants: violations detected")
        for msg in result.messages:
            print(f"  {msg}")
    return 0 if result.status == 0 else 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dpmm",
        description="decentralized proximal multiplier experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a seeded problem file")
    _add_problem_flags(p)
    p.add_argument("--out", required=True, help="problem file to write")
    p.add_argument("--graph-out", default=None, help="topology file to write")
    p.add_argument("--edges", type=int, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("oracle", help="solve a problem file centrally")
    p.add_argument("--problem", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", default=None, help="solution JSON to write")
    p.add_argument("--cache", default=None, help="solution cache directory")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("run", help="run a full experiment")
    _add_problem_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check-params", help="validate parameter ranges")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--graph", default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--edges", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mixing", choices=["scaled-metropolis", "laplacian"],
                   default="scaled-metropolis")
    p.add_argument("--nu", type=float, default=2.0)
    p.set_defaults(func=cmd_check_params)

    p = sub.add_parser("rates", help="windowed rate report from a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--windows", type=int, default=4)
    p.add_argument("--min-rounds", type=int, default=200)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser(
        "invariants",
        help="re-run an experiment with per-round invariant checking",
    )
    _add_problem_flags(p)
    _add_run_flags(p)
    p.add_argument("--fejer", action="store_true",
                   help="also check the descent inequality")
    p.set_defaults(func=cmd_invariants)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
