"""Command-line entry point: ``regimecl <subcommand>``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from .config import ConfigError, load_config
from .data import sample_orders
from .descent import fuzz_descent


def _fail(kind: str, errors: list[str], code: int = 1) -> int:
    for err in errors:
        print(f"error: {err}", file=sys.stderr)
    print(json.dumps({"status": "error", "kind": kind, "errors": errors}), file=sys.stderr)
    return code


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail("config", exc.errors)
    except OSError as exc:
        return _fail("io", [str(exc)])
    cells = len(cfg.regimes) * len(cfg.methods) * (1 + cfg.n_random_orders)
    print(f"ok: {cells} cells ({len(cfg.regimes)} regimes x {len(cfg.methods)} methods x "
          f"{1 + cfg.n_random_orders} orders)")
    return 0


def cmd_run(args) -> int:
    from .reports import emit_reports
    from .runner import run_matrix

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail("config", exc.errors)
    except OSError as exc:
        return _fail("io", [str(exc)])
    out = Path(args.output_dir or os.environ.get("RL_OUTPUT_DIR") or cfg.output_dir)
    start = time.perf_counter()
    try:
        manifest = run_matrix(cfg, workers=args.workers, output_dir=out)
    except Exception as exc:
        return _fail(type(exc).__name__, [str(exc)])
    failed = [c["stem"] for c in manifest["cells"] if c["status"] != "ok"]
    print(f"cells: {len(manifest['cells'])}, failed: {len(failed)}, "
          f"elapsed: {time.perf_counter() - start:.1f}s, output: {out}")
    if args.analyze:
        emit_reports(out)
    if failed:
        return _fail("run", [f"cell {stem} failed" for stem in failed])
    return 0


def cmd_analyze(args) -> int:
    from .reports import emit_reports

    try:
        outputs = emit_reports(args.results_dir)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, [str(exc)])
    for path in outputs.values():
        print(path)
    return 0


def cmd_tau(args) -> int:
    from .reports import tau_matrix_csv, write_tau

    try:
        agreement = write_tau(args.results_dir)
    except (OSError, KeyError, ValueError) as exc:
        return _fail(type(exc).__name__, [str(exc)])
    sys.stdout.write(tau_matrix_csv(agreement))
    return 0


def cmd_bound_check(args) -> int:
    start = time.perf_counter()
    summary = fuzz_descent(args.trials, args.dim_max, args.seed, boundary=args.boundary)
    elapsed = time.perf_counter() - start
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["trial", "eta", "L", "value", "value_next", "rhs", "rhs_intermediate", "tol", "holds"])
            for i, r in enumerate(summary.reports):
                writer.writerow([i, repr(r.eta), repr(r.L), repr(r.value), repr(r.value_next),
                                 repr(r.rhs), repr(r.rhs_intermediate), repr(r.tol), int(r.holds)])
    print(f"trials: {summary.trials}, violations: {summary.violations}, "
          f"intermediate_violations: {summary.intermediate_violations}, elapsed: {elapsed:.2f}s")
    if summary.violations or summary.intermediate_violations:
        return _fail("bound", [f"{summary.violations} descent-bound violations"])
    return 0


def cmd_orders(args) -> int:
    if args.tasks < 1:
        return _fail("usage", ["--tasks must be positive"], 2)
    for order in sample_orders(args.tasks, args.random, args.seed):
        print(" ".join(map(str, order.perm)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regimecl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{run,analyze,tau,bound-check,orders,validate}")

    p = sub.add_parser("run", help="run every regime x method x order cell of a config")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None, help="parallel runs (default: config value or all cores)")
    p.add_argument("--output-dir", default=None, help="overrides RL_OUTPUT_DIR and the config")
    p.add_argument("--analyze", action="store_true", help="emit reports after the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="write summary, tau and gradient/forgetting tables")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tau", help="recompute the regime agreement matrix")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_tau)

    p = sub.add_parser("bound-check", help="fuzz the projected descent bound on random quadratics")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim-max", type=int, default=20)
    p.add_argument("--boundary", action="store_true", help="use eta = 1/L in every trial")
    p.add_argument("--csv", default=None, help="write per-trial rows here")
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("orders", help="print the shared task orders")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--random", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_orders)

    p = sub.add_parser("validate", help="parse and validate a config")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
