"""Command line entry point: parse-check, newton-ref, run, tune, print-schema."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .dataio import load_libsvm, synthetic_logistic
from .errors import ConfigError, ConvergenceError, DivergenceError, ParseError
from .glm import GlmProblem, newton_reference


def _dataset(args):
    if args.synthetic:
        count, dim = (int(v) for v in args.synthetic.split(","))
        return synthetic_logistic(count, dim, args.data_seed)
    if not args.data:
        raise SystemExit("error: give --data PATH or --synthetic COUNT,DIM")
    return load_libsvm(args.data, label_mode=args.label_mode, add_bias=args.add_bias)


def _add_data_args(p):
    p.add_argument("--data", help="LIBSVM file (.gz allowed)")
    p.add_argument("--synthetic", metavar="COUNT,DIM", help="synthetic logistic data instead of a file")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--label-mode", choices=["pm1", "01"], default="pm1")
    p.add_argument("--add-bias", action="store_true")


def cmd_parse_check(args) -> int:
    try:
        data = load_libsvm(args.path, label_mode=args.label_mode)
    except ParseError as exc:
        print(f"{args.path}: {exc}", file=sys.stderr)
        return 1
    pos, neg = data.label_balance()
    norms = data.row_norms()
    print(json.dumps({"count": data.count, "dim": data.dim, "nnz": int(data.indices.size),
                      "positive": pos, "negative": neg,
                      "max_row_norm": float(norms.max())}))  # fmt: skip
    return 0


def cmd_newton_ref(args) -> int:
    problem = GlmProblem(_dataset(args), args.mu)
    try:
        res = newton_reference(problem, tol=args.tol, max_iters=args.max_iters)
    except ConvergenceError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    print(f"F* = {res.value:.16g}  (iterations {res.iterations}, ||grad|| = {res.grad_norm:.3e})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "x_star.txt", res.x, fmt="%.17g")
        info = {"mu": args.mu, "f_star": res.value, "iterations": res.iterations,
                "grad_norm": res.grad_norm}  # fmt: skip
        (out / "newton_ref.json").write_text(json.dumps(info, indent=2) + "\n")
    return 0


def cmd_run(args) -> int:
    """Single algorithm run at fixed hyperparameters (a one-point grid)."""
    data_spec = (
        {"synthetic": dict(zip(("count", "dim"), map(int, args.synthetic.split(","))), seed=args.data_seed)}
        if args.synthetic
        else {"path": args.data, "label_mode": args.label_mode, "add_bias": args.add_bias}
    )
    raw = {
        "algorithms": [args.alg],
        "data": data_spec,
        "mu": [args.mu],
        "M": [args.M],
        "K": [args.K],
        "R": [args.R],
        "eta_grid": [args.eta],
        "beta_grid": [args.beta],
        "lambda_internal_grid": [args.lambda_internal or 1e-4],
        "fedac_mode": "internal" if args.lambda_internal else "explicit",
        "nu": args.nu,
        "seed": args.seed,
        "tuning_reps": 1,
        "final_reps": args.reps,
        "replace": not args.single_pass,
    }
    cfg = harness.ExperimentConfig.from_dict(raw)
    table = harness.run_experiment(cfg, args.out, threads=args.threads)
    sys.stdout.write(harness.rows_to_csv(table.rows))
    return 0


def cmd_tune(args) -> int:
    cfg = harness.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = harness.ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    table = harness.run_experiment(cfg, args.out, threads=args.threads)
    sys.stdout.write(harness.rows_to_csv(table.rows))
    return 0


def cmd_print_schema(args) -> int:
    print(json.dumps(harness.CONFIG_SCHEMA, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stochnewton", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse-check", help="validate a LIBSVM file")
    p.add_argument("path")
    p.add_argument("--label-mode", choices=["pm1", "01"], default="pm1")
    p.set_defaults(func=cmd_parse_check)

    p = sub.add_parser("newton-ref", help="high-precision reference optimum F*")
    _add_data_args(p)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--tol", type=float, default=1e-12)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_newton_ref)

    p = sub.add_parser("run", help="run one algorithm at fixed hyperparameters")
    p.add_argument("--alg", required=True, choices=harness.ALGORITHMS)
    _add_data_args(p)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("-M", type=int, required=True)
    p.add_argument("-K", type=int, required=True)
    p.add_argument("-R", type=int, required=True)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--nu", type=float, default=1.25)
    p.add_argument("--lambda-internal", type=float, help="FedAc internal regularisation")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--single-pass", action="store_true", help="sample without replacement")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="grid-search and rerun from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config's master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("print-schema", help="print the JSON schema for tune configs")
    p.set_defaults(func=cmd_print_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, DivergenceError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
