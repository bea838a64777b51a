"""Command line front end.

Subcommands: generate, reformulate, bound, solve, bench, export.  All
artifacts are plain files (instance JSON, LP text, CSV/markdown reports) so
that runs are scriptable and reproducible.
"""

import argparse
import json
import sys

import numpy as np

from . import bench, bnb, core, generators, mccormick, reformulate


def _add_shared(p):
    p.add_argument("--rel-tol", type=float, default=1e-4,
                   help="relative optimality tolerance (default 1e-4)")
    p.add_argument("--time-limit", type=float, default=1200.0,
                   help="wall-clock limit per solve in seconds (default 1200)")
    p.add_argument("--node-limit", type=int, default=100000,
                   help="branch-and-bound node limit")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", default=".")


def _gen_config(args, seed=None):
    return generators.GenConfig(family=args.family, n=args.n, m=args.m,
                                density=args.density,
                                seed=args.seed if seed is None else seed)


def _reformulated(inst):
    plain, qnr, params = bench._pipeline(inst)
    return plain, qnr, params


def cmd_generate(args):
    inst = generators.generate(_gen_config(args))
    core.save_instance(inst, args.out)
    print(args.out)
    return 0


def cmd_reformulate(args):
    inst = core.load_instance(args.infile)
    _plain, qnr, params = _reformulated(inst)
    core.save_instance(qnr, args.out)
    print(json.dumps({"out": args.out,
                      "provenance": params.provenance,
                      "sdp_value": None if not np.isfinite(params.sdp_value)
                      else params.sdp_value}))
    return 0


def cmd_bound(args):
    inst = core.load_instance(args.infile)
    if args.reformulate:
        _plain, inst, _params = _reformulated(inst)
    res = mccormick.relaxation_bound(mccormick.build_mcr(inst))
    print(json.dumps({"status": res.status,
                      "bound": None if not np.isfinite(res.value) else res.value,
                      "rounds": res.rounds}))
    return 0 if res.status == "optimal" else 1


def cmd_solve(args):
    inst = core.load_instance(args.infile)
    if args.reformulate:
        _plain, inst, _params = _reformulated(inst)
    rep = bnb.solve_global(inst, rel_tol=args.rel_tol,
                           time_limit=args.time_limit,
                           node_limit=args.node_limit,
                           log_stream=sys.stderr if args.verbose else None)
    out = {"status": rep.status, "value": rep.value, "bound": rep.bound,
           "gap": rep.gap, "nodes": rep.nodes, "seconds": round(rep.seconds, 3),
           "x": None if rep.x is None else [float(v) for v in rep.x]}
    print(json.dumps(out))
    return 0 if rep.status == bnb.OPTIMAL else 1


def cmd_bench(args):
    seeds = [int(s) for s in args.seeds.split(",")]
    sizes = [int(s) for s in args.sizes.split(",")]
    configs = [generators.GenConfig(family=args.family, n=n, m=args.m,
                                    density=args.density, seed=s)
               for n in sizes for s in seeds]
    rows = bench.run_benchmark(configs, rel_tol=args.rel_tol,
                               time_limit=args.time_limit,
                               node_limit=args.node_limit, jobs=args.jobs,
                               out_dir=args.out_dir, timings=args.timings)
    print(bench.format_report(rows), end="")
    return 0


def cmd_export(args):
    inst = core.load_instance(args.infile)
    core.export_lp(inst, args.out)
    print(args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="qnrkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a seeded instance to JSON")
    p.add_argument("--family", required=True, choices=generators.FAMILIES)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--out", required=True)
    _add_shared(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reformulate", help="derive parameters and rewrite")
    p.add_argument("infile")
    p.add_argument("--out", required=True)
    _add_shared(p)
    p.set_defaults(func=cmd_reformulate)

    p = sub.add_parser("bound", help="root relaxation bound")
    p.add_argument("infile")
    p.add_argument("--reformulate", action="store_true",
                   help="bound the reformulated instance instead")
    _add_shared(p)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("solve", help="global branch-and-bound solve")
    p.add_argument("infile")
    p.add_argument("--reformulate", action="store_true")
    p.add_argument("--verbose", action="store_true")
    _add_shared(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="plain-vs-reformulated benchmark batch")
    p.add_argument("--family", required=True, choices=generators.FAMILIES)
    p.add_argument("--sizes", default="5", help="comma list of n values")
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seeds", default="1", help="comma list of seeds")
    p.add_argument("--timings", action="store_true",
                   help="fill wall-clock columns (breaks byte determinism)")
    _add_shared(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export", help="write an instance as an LP file")
    p.add_argument("infile")
    p.add_argument("--out", required=True)
    _add_shared(p)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
