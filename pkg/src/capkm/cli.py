"""capkm command line: solve, generate, exact, eval, bench."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .instance import (ParseError, gen_battery_instance, gen_euclidean, gen_gap_instance,
                       load_instance, serialize_instance)
from .oracle import GuardExceeded, exact_solve
from .pipeline import InfeasibleInstance, SolveConfig, solve
from .rounding import cap_limit

EXIT_OK, EXIT_INFEASIBLE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3

BENCH_FIELDS = ("instance", "eps", "lp", "cost", "ratio", "opt", "opt_ratio",
                "violation", "n_open", "k", "time")

log = logging.getLogger("capkm")


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _setup_logging():
    level = {"quiet": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}.get(
        os.environ.get("CAPKM_LOG", "quiet").lower(), logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def _add_source(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--input", metavar="PATH")
    g.add_argument("--gap", type=int, metavar="U")
    g.add_argument("--euclid", nargs=5, type=int, metavar=("NF", "NC", "K", "CAPLO", "CAPHI"))
    p.add_argument("--dist", type=float, default=1.0, help="inter-group distance for --gap")


def _load(args):
    try:
        if args.input:
            return load_instance(args.input)
        if args.gap is not None:
            return gen_gap_instance(args.gap, args.dist)
        nf, nc, k, lo, hi = args.euclid
        return gen_euclidean(nf, nc, k, lo, hi, args.seed)
    except (OSError, ParseError) as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except ValueError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _config(args):
    try:
        return SolveConfig(eps=args.eps, seed=args.seed, max_iters=args.max_iters,
                           budget=args.budget)
    except ValueError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


def _write(path, text):
    try:
        if path in (None, "-"):
            sys.stdout.write(text)
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc


# ------------------------------------------------------------- commands

def cmd_solve(args):
    inst = _load(args)
    try:
        rep = solve(inst, _config(args))
    except InfeasibleInstance as exc:
        raise CliError(EXIT_INFEASIBLE, str(exc)) from exc
    _write(args.out, rep.to_json() + "\n" if args.json else rep.to_text())
    if args.assignment:
        _write(args.assignment, "".join(f"{c} {f}\n" for c, f in rep.assignment))
    return EXIT_OK


def cmd_generate(args):
    _write(args.out, serialize_instance(_load(args)))
    return EXIT_OK


def cmd_exact(args):
    inst = _load(args)
    try:
        res = exact_solve(inst, args.cap_scale)
    except GuardExceeded as exc:
        raise CliError(EXIT_INTERNAL, str(exc)) from exc
    if not res.feasible:
        raise CliError(EXIT_INFEASIBLE, "no open set admits a feasible assignment")
    print(f"{res.cost:g}")
    return EXIT_OK


def read_assignment(path, inst):
    fid = {f: i for i, f in enumerate(inst.facility_ids)}
    cid = {c: j for j, c in enumerate(inst.client_ids)}
    sigma = np.full(inst.nc, -1)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise CliError(EXIT_IO, f"line {n}: expected '<client> <facility>'")
        c, f = parts
        if c not in cid or f not in fid:
            raise CliError(EXIT_IO, f"line {n}: unknown id")
        if sigma[cid[c]] >= 0:
            raise CliError(EXIT_IO, f"line {n}: client {c} assigned twice")
        sigma[cid[c]] = fid[f]
    return sigma


def evaluate(inst, sigma, eps=0.0):
    """Problems with an assignment, and its cost."""
    problems = []
    missing = [inst.client_ids[j] for j in np.flatnonzero(sigma < 0)]
    if missing:
        problems.append(f"unassigned clients: {' '.join(missing)}")
        return problems, math.inf
    opened = sorted(set(sigma.tolist()))
    if len(opened) > inst.k:
        problems.append(f"{len(opened)} facilities used, k={inst.k}")
    loads = np.bincount(sigma, minlength=inst.nf)
    for i in opened:
        lim = cap_limit(inst.capacities[i], eps) if eps > 0 else int(inst.capacities[i])
        if loads[i] > lim:
            problems.append(f"facility {inst.facility_ids[i]} load {loads[i]} exceeds {lim}")
    cost = float(inst.d_fc[sigma, np.arange(inst.nc)].sum())
    return problems, cost


def cmd_eval(args):
    inst = _load(args)
    sigma = read_assignment(args.assignment, inst)
    problems, cost = evaluate(inst, sigma, args.eps)
    for p in problems:
        print(p, file=sys.stderr)
    if problems:
        return EXIT_INFEASIBLE
    print(f"cost: {cost!r}")
    return EXIT_OK


def bench_row(seed, eps, max_iters=20, budget=None, with_opt=True):
    inst = gen_battery_instance(seed)
    cfg = SolveConfig(eps=eps, seed=seed, max_iters=max_iters,
                      **({"budget": budget} if budget else {}))
    t = time.perf_counter()
    try:
        rep = solve(inst, cfg)
    except InfeasibleInstance:
        return None
    elapsed = time.perf_counter() - t
    opt = exact_solve(inst, 1.0).cost if with_opt else math.nan
    return {"instance": inst.name, "eps": eps, "lp": rep.lp_value, "cost": rep.cost,
            "ratio": rep.ratio, "opt": opt,
            "opt_ratio": rep.cost / opt if opt and math.isfinite(opt) and opt > 0 else 1.0,
            "violation": rep.violation, "n_open": rep.n_open, "k": rep.k, "time": elapsed}


def _bench_task(a):
    return bench_row(*a)


def run_bench(count, seed, eps_list, jobs=1, max_iters=20):
    tasks = [(seed + s, e, max_iters) for s in range(count) for e in eps_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_bench_task, tasks))
    else:
        rows = [_bench_task(t) for t in tasks]
    return [r for r in rows if r is not None]


def bench_summary(rows):
    out = {}
    for e in sorted({r["eps"] for r in rows}):
        sel = [r for r in rows if r["eps"] == e]
        out[repr(e)] = {"mean_ratio": float(np.mean([r["ratio"] for r in sel])),
                        "max_ratio": float(np.max([r["ratio"] for r in sel])),
                        "mean_opt_ratio": float(np.mean([r["opt_ratio"] for r in sel])),
                        "max_opt_ratio": float(np.max([r["opt_ratio"] for r in sel])),
                        "n": len(sel)}
    return out


def format_table(rows):
    head = f"{'instance':<34}{'eps':>5}{'lp':>10}{'cost':>10}{'ratio':>8}{'opt':>10}" \
           f"{'c/opt':>8}{'viol':>7}{'open':>6}{'k':>4}{'time':>8}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['instance']:<34}{r['eps']:>5g}{r['lp']:>10.4f}{r['cost']:>10.4f}"
                     f"{r['ratio']:>8.3f}{r['opt']:>10.4f}{r['opt_ratio']:>8.3f}"
                     f"{r['violation']:>7.3f}{r['n_open']:>6d}{r['k']:>4d}{r['time']:>8.2f}")
    return "\n".join(lines) + "\n"


def cmd_bench(args):
    eps_list = [float(e) for e in args.eps_list.split(",")]
    rows = run_bench(args.count, args.seed, eps_list, args.jobs, args.max_iters)
    sys.stdout.write(format_table(rows))
    summary = bench_summary(rows)
    for e, s in summary.items():
        print(f"eps={e} n={s['n']} mean cost/LP={s['mean_ratio']:.4f} "
              f"mean cost/OPT={s['mean_opt_ratio']:.4f}")
    if args.out:
        lines = ["\t".join(BENCH_FIELDS)]
        for r in rows:
            lines.append("\t".join(repr(r[f]) if isinstance(r[f], float) else str(r[f])
                                   for f in BENCH_FIELDS))
        _write(args.out, "\n".join(lines) + "\n")
    if args.summary:
        _write(args.summary, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="capkm", description="Capacitated k-median by LP rounding")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run the rounding pipeline")
    _add_source(s)
    s.add_argument("--eps", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-iters", type=int, default=20)
    s.add_argument("--budget", type=int, default=200_000)
    s.add_argument("--out", help="report path (default stdout)")
    s.add_argument("--assignment", help="write '<client> <facility>' lines here")
    s.add_argument("--json", action="store_true", help="machine-readable report")
    s.set_defaults(fn=cmd_solve)

    g = sub.add_parser("generate", help="emit an instance file")
    _add_source(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(fn=cmd_generate)

    e = sub.add_parser("exact", help="brute-force optimum")
    _add_source(e)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--cap-scale", type=float, default=1.0)
    e.set_defaults(fn=cmd_exact)

    v = sub.add_parser("eval", help="check and price an assignment")
    _add_source(v)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--assignment", required=True)
    v.add_argument("--eps", type=float, default=0.0, help="allowed capacity violation")
    v.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="seeded suite with LP and OPT ratios")
    b.add_argument("--count", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--eps-list", default="1,0.5")
    b.add_argument("--max-iters", type=int, default=20)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--out", help="tab-separated record")
    b.add_argument("--summary", help="JSON summary of mean ratios")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_IO if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
