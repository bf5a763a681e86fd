"""Command-line interface: ``cookiewalk env|walk|blp|params|classify|experiment``."""

from __future__ import annotations

import argparse
import csv
import sys

from .blp import (
    DEFAULT_EPS,
    exact_transition,
    params_from,
    sample_transitions,
)
from .classify import Verdict, classify_with_certificate
from .errors import CookieWalkError
from .experiments import build_id, fmt, load_config, run_experiment, _with
from .specfile import load_env, parse_inline_env, parse_int_grid
from .walk import simulate


def _env_args(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--env", metavar="FILE", help="environment spec file")
    g.add_argument("--env-inline", metavar="KIND:ARGS", help="e.g. finite:0.9,0.2")


def _load(args):
    return load_env(args.env) if args.env else parse_inline_env(args.env_inline)


def _grid(text):
    try:
        return parse_int_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_env(args):
    env = _load(args)
    est = env.total_drift(args.tol)
    print(f"env={env.describe()}")
    print(f"delta={fmt(est.value)} error={fmt(est.error)} terms={est.terms}")
    n = args.n
    s = env.env_stats(n)
    print(
        f"n={n} delta_n={fmt(env.drift_prefix(n))} tail_bound={fmt(env.tail_bound(n + 1))} "
        f"mean_strength={fmt(s.mean_strength)} variance_avg={fmt(s.variance_avg)} "
        f"bessel_gap={fmt(s.bessel_gap)} neg_cookies={env.neg_cookie_count(n)}"
    )
    if args.out:
        prefix = env.drift_prefixes(n)
        p = env.strengths(1, n + 1)
        _write_rows(
            args.out, ["j", "strength", "drift_prefix"],
            ([j, fmt(float(p[j - 1])), fmt(float(prefix[j]))] for j in range(1, n + 1)),
        )
    return 0


def cmd_walk(args):
    env = _load(args)
    batch = simulate(
        env, args.seed, args.reps, args.horizon, stream0=args.stream,
        threads=args.threads, trace=bool(args.trace_out),
    )
    if args.trace_out:
        _write_rows(args.trace_out, ["step", "position"], enumerate(batch.trace.tolist()))
    if args.summary_out:
        rows = (
            [
                r, int(batch.returns[r]),
                "" if batch.first_return[r] < 0 else int(batch.first_return[r]),
                int(batch.max_position[r]), int(batch.min_position[r]),
                int(batch.final_position[r]),
            ]
            for r in range(batch.reps)
        )
        _write_rows(args.summary_out, ["rep", "returns", "first_return", "max", "min", "final"], rows)
    returned = int((batch.first_return >= 0).sum())
    print(
        f"reps={batch.reps} horizon={args.horizon} returned={returned} "
        f"right={int((batch.final_position > 0).sum())} "
        f"left={int((batch.final_position < 0).sum())}"
    )
    return 0


def cmd_blp(args):
    env = _load(args)
    if args.mode == "exact":
        dist = exact_transition(env, args.n, args.eps)
        if args.out:
            _write_rows(
                args.out, ["m", "mass"],
                ([m, fmt(float(x))] for m, x in enumerate(dist.masses.tolist())),
            )
        print(
            f"n={args.n} mean={fmt(dist.mean())} variance={fmt(dist.variance())} "
            f"tail_mass={fmt(dist.tail_mass)} support_max={dist.support_max}"
        )
    else:
        z = sample_transitions(env, args.n, args.reps, args.seed, threads=args.threads)
        if args.out:
            _write_rows(args.out, ["rep", "z1"], enumerate(z.tolist()))
        print(f"n={args.n} reps={args.reps} mean={fmt(float(z.mean()))}")
    return 0


def cmd_params(args):
    env = _load(args)
    rows = []
    for n in args.n_grid:
        p = params_from(exact_transition(env, n, args.eps))
        rows.append([n, fmt(p.mu_n), fmt(p.rho_n), fmt(p.nu_n), fmt(p.theta_n), fmt(p.truncation_eps)])
    header = ["n", "mu", "rho", "nu", "theta", "eps_used"]
    if args.out:
        _write_rows(args.out, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return 0


def cmd_classify(args):
    env = _load(args)
    res = classify_with_certificate(
        env, args.tol, args.certify, args.certificate, args.eps, args.threads
    )
    verdict = (
        f"verdict={res.verdict.value} delta={fmt(res.delta)} error={fmt(res.error)} "
        f"tail_condition={res.tail_condition.value}"
    )
    if res.certificate is not None:
        verdict += (
            f" certificate={res.certificate.kind} "
            f"all_positive={int(res.certificate.all_positive)}"
        )
    print(verdict)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "theta", "threshold", "margin"])
            if res.certificate is not None:
                w.writerows(
                    [r.n, fmt(r.theta), fmt(r.threshold), fmt(r.margin)]
                    for r in res.certificate.rows
                )
            fh.write(f"# {verdict}\n")
    return 2 if res.verdict is Verdict.UNDETERMINED else 0


def cmd_experiment(args):
    config = load_config(args.config)
    if args.out_dir:
        config = _with(config, out_dir=args.out_dir)
    manifest = run_experiment(config, args.threads)
    for a in manifest["artifacts"]:
        print(f"{a['sha256']}  {a['path']}")
    print(f"manifest={config.out_dir}/manifest.json build={manifest['build']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cookiewalk", description=__doc__)
    ap.add_argument("--version", action="version", version=build_id())
    ap.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("env", help="drift, tail bound and statistics of an environment")
    _env_args(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--out", help="CSV j,strength,drift_prefix for j <= n")
    p.set_defaults(func=cmd_env)

    p = sub.add_parser("walk", help="simulate excited random walks")
    _env_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0, help="stream of replication 0")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--trace-out", help="CSV step,position of replication 0")
    p.add_argument("--summary-out", help="CSV rep,returns,first_return,max,min,final")
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("blp", help="one-step law of the branching-like process")
    _env_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--mode", choices=("exact", "mc"), default="exact")
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV m,mass (exact) or rep,z1 (mc)")
    p.set_defaults(func=cmd_blp)

    p = sub.add_parser("params", help="mu, rho, nu, theta over an n-grid")
    _env_args(p)
    p.add_argument("--n-grid", type=_grid, default=[2**k for k in range(4, 11)])
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("classify", help="recurrence/transience verdict")
    _env_args(p)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--certify", type=_grid, metavar="GRID", help="e.g. 2^7..2^17")
    p.add_argument("--certificate", choices=("survival", "extinction"), default="survival")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--out", help="CSV n,theta,threshold,margin plus a verdict line")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("experiment", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override out_dir from the config")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CookieWalkError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
