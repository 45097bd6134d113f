"""Batch command-line driver.

Every command validates its flags before any computation, writes one primary
output (``--output`` file, or stdout) and, when writing a file, a manifest
``<output>.manifest.json`` with the full config, seed, versions and wall time.

Exit codes: 0 success, 1 numeric failure, 2 usage error. Errors are printed
to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings

import numpy as np

SEED_ENV = "IBMTAIL_SEED"
COMPARE_HEADER = ["r", "mc_estimate", "mc_stderr", "asymptotic", "borell", "thm2", "ratio_mc_asym"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _default_seed():
    from .acceptance import DEFAULT_SEED

    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ibmtail", description="Tail probabilities of integrated Brownian motions.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, norm=True, rng=True, fmt="csv"):
        sp.add_argument("--m", type=int, default=1, help="order of integration (default 1)")
        if norm:
            sp.add_argument("--norm", default="sup", choices=["sup", "max", "l2", "lp"])
            sp.add_argument("--p", type=float, default=None, help="exponent for --norm lp")
        if rng:
            sp.add_argument("--seed", type=int, default=None, help=f"default from ${SEED_ENV}")
            sp.add_argument("--stream", type=int, default=0)
            sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--output", default=None, help="output file (default stdout)")
        sp.add_argument("--format", choices=["json", "csv"], default=fmt)

    sp = sub.add_parser("kernel", help="covariance kernel on a grid")
    common(sp, norm=False, rng=False)
    sp.add_argument("--t", type=_floats, default=None, help="times in [0,1]")
    sp.add_argument("--grid", type=int, default=8, help="uniform grid size when --t is absent")

    sp = sub.add_parser("spectrum", help="Nystrom spectrum of the covariance operator")
    common(sp, norm=False, rng=False, fmt="json")
    sp.add_argument("--nodes", type=int, default=256)
    sp.add_argument("--plain", action="store_true", help="no diagonal singularity correction")
    sp.add_argument("--terms", type=int, default=None, help="eigenvalues to report")

    sp = sub.add_parser("simulate", help="sample paths")
    common(sp, norm=False)
    sp.add_argument("--grid", type=int, default=64)
    sp.add_argument("--n", type=int, default=1, help="number of paths")
    sp.add_argument("--method", default="state-stepping",
                    choices=["state-stepping", "cholesky", "karhunen-loeve"])

    def mc(sp, n_default):
        sp.add_argument("--n", type=int, default=n_default, help="Monte Carlo sample size")
        sp.add_argument("--grid", type=int, default=4096)
        sp.add_argument("--discrete", action="store_true",
                        help="m=0 sup: grid sup instead of the bridge-corrected continuous sup")

    sp = sub.add_parser("tail", help="Monte Carlo tail probability")
    common(sp)
    mc(sp, 100_000)
    sp.add_argument("--r", type=_floats, required=True)
    sp.add_argument("--is", dest="is_kind", choices=["none", "endpoint", "eigen"], default="none")
    sp.add_argument("--shift", type=float, default=None, help="IS drift magnitude (default r)")

    sp = sub.add_parser("smallball", help="small-ball curve and fitted exponent")
    common(sp)
    mc(sp, 1_000_000)
    sp.add_argument("--eps", type=_floats, required=True)

    sp = sub.add_parser("laplace", help="Laplace transform E exp(r ||X||^theta)")
    common(sp)
    mc(sp, 100_000)
    sp.add_argument("--r", type=_floats, required=True)
    sp.add_argument("--theta", type=float, default=1.0)
    sp.add_argument("--method", default="tail-integral",
                    choices=["direct-mc", "tail-integral", "asymptotic"])

    sp = sub.add_parser("compare", help="MC tail against asymptotics and bounds")
    common(sp)
    mc(sp, 100_000)
    sp.add_argument("--r", type=_floats, required=True)
    sp.add_argument("--is", dest="is_kind", choices=["none", "endpoint", "eigen"], default=None,
                    help="default: endpoint drift on grid routes, eigen drift for L2")
    sp.add_argument("--mean-n", type=int, default=20_000, help="paths for the mean norm")
    sp.add_argument("--c1", type=float, default=1.0)
    sp.add_argument("--c2", type=float, default=1.0)

    sp = sub.add_parser("verify", help="run the acceptance battery")
    sp.add_argument("--seed", type=int, default=None, help=f"default from ${SEED_ENV}")
    sp.add_argument("--only", type=_floats, default=None, help="criterion ids")
    sp.add_argument("--output", default=None)
    sp.add_argument("--format", choices=["json"], default="json")
    return p


# ---- validation -----------------------------------------------------------

def _config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("output", "threads")}
    if cfg.get("only") is not None:
        cfg["only"] = [int(c) for c in cfg["only"]]
    return cfg


def validate(args) -> None:
    from .process import MAX_ORDER

    def need(cond, msg):
        if not cond:
            raise UsageError(msg)

    if not hasattr(args, "seed"):
        args.seed = None  # deterministic command, no randomness
    else:
        if args.seed is None:
            args.seed = _default_seed()
        need(args.seed >= 0, "--seed must be nonnegative")
    if args.command == "verify":
        if args.only:
            need(all(c == int(c) and 1 <= c <= 10 for c in args.only), "--only takes ids 1..10")
        return
    need(0 <= args.m <= MAX_ORDER, f"--m must lie in 0..{MAX_ORDER}")
    if getattr(args, "stream", 0) is not None:
        need(getattr(args, "stream", 0) >= 0, "--stream must be nonnegative")
    need(getattr(args, "threads", 1) >= 1, "--threads must be at least 1")
    if hasattr(args, "norm"):
        if args.norm == "lp":
            need(args.p is not None and 1.0 <= args.p < math.inf, "--norm lp needs a finite --p >= 1")
        else:
            need(args.p is None, "--p only applies to --norm lp")
    if hasattr(args, "grid"):
        need(args.grid >= 2, "--grid must be at least 2")
    if getattr(args, "n", None) is not None:
        need(args.n >= 1, "--n must be positive")
    c = args.command
    if c == "kernel" and args.t is not None:
        need(all(0.0 <= t <= 1.0 for t in args.t), "--t values must lie in [0, 1]")
    if c == "spectrum":
        need(args.nodes >= 2, "--nodes must be at least 2")
        need(args.terms is None or 1 <= args.terms <= args.nodes, "--terms must lie in 1..nodes")
    if c == "simulate" and args.method == "cholesky":
        need(args.grid <= 4096, "cholesky sampling is capped at 4096 grid points")
    if c in ("tail", "laplace", "compare"):
        need(all(r > 0 for r in args.r), "--r values must be positive")
    if c in ("tail", "smallball", "compare"):
        need(args.n >= 1000, "--n must be at least 1000")
    if c in ("tail", "compare") and args.is_kind not in (None, "none"):
        l2 = args.norm == "l2" or (args.norm == "lp" and args.p == 2.0)
        need((args.is_kind == "eigen") == l2,
             "--is eigen pairs with the L2 norm, --is endpoint with grid norms")
    if c == "tail":
        need(args.shift is None or args.shift >= 0, "--shift must be nonnegative")
    if c == "smallball":
        need(all(e > 0 for e in args.eps), "--eps values must be positive")
    if c == "laplace":
        need(1.0 <= args.theta < 2.0, "--theta must lie in [1, 2)")
        if args.method != "direct-mc":
            need(args.norm in ("sup", "max", "l2") or args.p == 2.0 or args.method == "asymptotic",
                 "tail-integral needs a norm with a known sharp asymptotic (sup, max, l2)")
    if c == "compare":
        need(args.mean_n >= 2, "--mean-n must be at least 2")


# ---- commands ---------------------------------------------------------------

def _norm(args):
    from .estimators import NormSpec

    return NormSpec.parse(args.norm, args.p)


def _grid(args):
    from .simulate import TimeGrid

    return TimeGrid.uniform(args.grid)


def _mc_kw(args):
    return {"grid": _grid(args), "continuous": not args.discrete, "threads": args.threads}


def _reference(spec, norm, r):
    """Sharp asymptotic for the norms that have one, else None."""
    from .estimators import tail_asymptotic_for
    from .formulas import asymptotic_tail_lp_bm

    if norm.kind == "lp" and norm.p != 2.0:
        return asymptotic_tail_lp_bm(norm.p, r).value if spec.m == 0 else None
    return tail_asymptotic_for(spec, norm)(r).value


def cmd_kernel(args, chash):
    from .process import ProcessSpec, kernel_matrix

    spec = ProcessSpec(args.m)
    t = np.asarray(args.t if args.t is not None else _grid(args).points)
    K = kernel_matrix(spec, t)
    if args.format == "json":
        return {"m": args.m, "t": t, "kernel": K}
    rows = [["s", "t", "value"]]
    rows += [[float(t[i]), float(t[j]), float(K[i, j])] for i in range(len(t)) for j in range(len(t))]
    return rows


def cmd_spectrum(args, chash):
    from .process import ProcessSpec
    from .spectrum import nystrom_spectrum

    s = nystrom_spectrum(ProcessSpec(args.m), args.nodes, corrected=not args.plain)
    d = s.to_dict()
    if args.terms is not None:
        d["eigenvalues"] = d["eigenvalues"][: args.terms]
    d["corrected"] = not args.plain
    if args.format == "json":
        return d
    return [["n", "eigenvalue"]] + [[i + 1, v] for i, v in enumerate(d["eigenvalues"])]


def cmd_simulate(args, chash):
    from .process import ProcessSpec
    from .rng import RngStream
    from .simulate import paths_to_csv_rows, sample_paths

    sample = sample_paths(ProcessSpec(args.m), _grid(args), RngStream(args.seed, args.stream),
                          args.n, args.method)
    if args.format == "json":
        k = sample.states.shape[2]
        cols = [f"x{j}" for j in range(args.m + 1 - k, args.m + 1)]
        return {"m": args.m, "method": args.method, "columns": cols,
                "t": sample.grid.points, "paths": sample.states}
    return list(paths_to_csv_rows(sample))


def cmd_tail(args, chash):
    from .estimators import TAIL_CSV_HEADER, ISConfig, mc_tail_many
    from .process import ProcessSpec
    from .rng import RngStream

    spec, norm = ProcessSpec(args.m), _norm(args)
    isc = None if args.is_kind == "none" else ISConfig(args.is_kind, args.shift)
    ests = mc_tail_many(spec, norm, args.r, args.n, RngStream(args.seed, args.stream), isc,
                        **_mc_kw(args))
    refs = [_reference(spec, norm, e.r) for e in ests]
    if args.format == "json":
        return {"estimates": [dict(e.to_dict(), reference=ref) for e, ref in zip(ests, refs)]}
    return [TAIL_CSV_HEADER + ["reference"]] + [e.csv_row() + [ref] for e, ref in zip(ests, refs)]


def cmd_smallball(args, chash):
    from .estimators import small_ball_curve
    from .process import ProcessSpec
    from .rng import RngStream

    res = small_ball_curve(ProcessSpec(args.m), _norm(args), args.eps, args.n,
                           RngStream(args.seed, args.stream), **_mc_kw(args))
    if args.format == "json":
        return dict(res.to_dict(), m=args.m, norm=args.norm, seed=args.seed)
    rows = [["eps", "estimate", "stderr", "included", "slope", "intercept"]]
    for e, p, s, inc in zip(res.eps, res.estimates, res.stderr, res.included):
        rows.append([float(e), float(p), float(s), int(inc), res.slope, res.intercept])
    return rows


def cmd_laplace(args, chash):
    from .estimators import default_spectrum, laplace_estimate
    from .formulas import laplace_asymptotic
    from .process import ProcessSpec
    from .rng import RngStream
    from .spectrum import operator_p_norm

    spec, norm = ProcessSpec(args.m), _norm(args)
    spectrum = default_spectrum(spec) if norm.kind == "lp" and norm.p == 2.0 else None
    op = operator_p_norm(spec, norm.p) if norm.kind == "lp" and norm.p != 2.0 else None
    out = []
    for i, r in enumerate(args.r):
        asym = laplace_asymptotic(spec, norm, args.theta, r, spectrum=spectrum, op_norm=op).value
        if args.method == "asymptotic":
            out.append({"r": r, "theta": args.theta, "method": "asymptotic", "value": asym,
                        "stderr": 0.0, "asymptotic": asym, "n": 0, "extra": {}})
            continue
        rng = RngStream(args.seed, args.stream).substream(i)
        est = laplace_estimate(spec, norm, r, args.theta, args.method, args.n, rng,
                               spectrum=spectrum, grid=_grid(args), threads=args.threads)
        out.append(dict(est.to_dict(), asymptotic=asym))
    if args.format == "json":
        return {"m": args.m, "norm": norm.label, "p": norm.p, "seed": args.seed, "rows": out}
    rows = [["r", "theta", "method", "value", "stderr", "asymptotic", "n", "seed"]]
    rows += [[o["r"], o["theta"], o["method"], o["value"], o["stderr"], o["asymptotic"], o["n"], args.seed]
             for o in out]
    return rows


def cmd_compare(args, chash):
    from .estimators import ISConfig, choose_route, default_spectrum, mc_tail_many, mean_norm
    from .formulas import borell_bound, thm2_bound
    from .process import ProcessSpec
    from .rng import RngStream
    from .spectrum import operator_p_norm

    spec, norm = ProcessSpec(args.m), _norm(args)
    grid = _grid(args)
    route = choose_route(spec, norm, grid, not args.discrete)
    kind = args.is_kind or ("eigen" if route == "kl" else "endpoint")
    isc = None if kind == "none" else ISConfig(kind)
    base = RngStream(args.seed, args.stream)
    ests = mc_tail_many(spec, norm, args.r, args.n, base.substream(0), isc, **_mc_kw(args))
    if norm.kind == "lp":
        sigma_sq = (float(default_spectrum(spec).eigenvalues[0]) if norm.p == 2.0
                    else operator_p_norm(spec, norm.p))
    else:
        sigma_sq = spec.sup_variance
    mn, mn_se = mean_norm(spec, norm, args.mean_n, base.substream(1), grid=grid,
                          threads=args.threads)
    rows = []
    for e in ests:
        asym = _reference(spec, norm, e.r)
        bor = borell_bound(e.r, mn, sigma_sq) if e.r > mn else None
        thm2 = thm2_bound(spec, norm.p, e.r, sigma_sq, args.c1, args.c2) if norm.kind == "lp" else None
        ratio = e.estimate / asym if asym else None
        rows.append([e.r, e.estimate, e.stderr, asym, bor, thm2, ratio])
    if args.format == "json":
        return {"m": args.m, "norm": norm.label, "p": norm.p, "seed": args.seed,
                "mean_norm": mn, "mean_norm_stderr": mn_se, "sigma_sq": sigma_sq,
                "importance": kind, "rows": [dict(zip(COMPARE_HEADER, r)) for r in rows]}
    return [COMPARE_HEADER] + rows


def cmd_verify(args, chash):
    from .acceptance import run_battery

    only = [int(c) for c in args.only] if args.only else None

    def progress(res):
        print(f"  [{res.cid:2d}] {'PASS' if res.passed else 'FAIL'}  {res.name}  "
              f"({res.seconds:.1f}s, budget {res.budget_s:g}s)", file=sys.stderr, flush=True)

    results = run_battery(args.seed, only, progress)
    args._timings = {str(r.cid): r.seconds for r in results}
    args._failed = [r.cid for r in results if not r.passed]
    _print_table(results)
    return {"seed": args.seed, "all_passed": not args._failed,
            "criteria": [r.to_dict() for r in results]}


def _print_table(results):
    w = max(len(r.name) for r in results)
    print(f"{'id':>3}  {'criterion':<{w}}  result")
    for r in results:
        print(f"{r.cid:>3}  {r.name:<{w}}  {'PASS' if r.passed else 'FAIL'}")
    print(f"{sum(r.passed for r in results)}/{len(results)} passed")


COMMANDS = {"kernel": cmd_kernel, "spectrum": cmd_spectrum, "simulate": cmd_simulate,
            "tail": cmd_tail, "smallball": cmd_smallball, "laplace": cmd_laplace,
            "compare": cmd_compare, "verify": cmd_verify}


def _render(result, fmt, chash, seed, command):
    from .provenance import csv_text, dumps

    if fmt == "json":
        return dumps(dict(result, config_hash=chash, seed=seed))
    seed_part = "" if seed is None else f" seed={seed}"
    return csv_text(result, comment=f"ibmtail {command}{seed_part} config_hash={chash}")


def _fail(kind, exc, code):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": msg}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    from .provenance import config_hash, manifest, manifest_path, write_atomic, dumps

    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        validate(args)
    except UsageError as exc:
        return _fail("usage", exc, 2)
    cfg = _config(args)
    chash = config_hash(cfg)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = COMMANDS[args.command](args, chash)
        text = _render(result, args.format, chash, args.seed, args.command)
    except Exception as exc:  # numeric failures from the library
        return _fail("numeric", exc, 1)
    wall = time.perf_counter() - t0
    if args.output:
        write_atomic(args.output, text)
        extra = {"timings_seconds": args._timings} if hasattr(args, "_timings") else None
        m = manifest(dict(cfg, output=args.output, threads=getattr(args, "threads", 1)),
                     chash, args.seed, wall, extra)
        write_atomic(manifest_path(args.output), dumps(m))
    elif args.command != "verify":
        sys.stdout.write(text)
    if getattr(args, "_failed", None):
        return _fail("numeric", RuntimeError(f"acceptance criteria failed: {args._failed}"), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
