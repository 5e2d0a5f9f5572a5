"""Experiment runner CLI: run / active / verify / bench subcommands.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
arguments.  Set GLISTER_THREADS to cap candidate-scoring parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    ConfigError,
    load_active_config,
    load_experiment_config,
    run_active_experiment,
    run_bench,
    run_experiment,
)
from .verify import SUITES, run_suite

__all__ = ["main", "cmd_run", "cmd_active", "cmd_verify", "cmd_bench"]


def cmd_run(config_path: str) -> int:
    try:
        config = load_experiment_config(config_path)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run_experiment(config)
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 1
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(summary)} runs to {config.output_dir}")
    return 0


def cmd_active(config_path: str) -> int:
    try:
        config = load_active_config(config_path)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        summary = run_active_experiment(config)
    except Exception as exc:  # noqa: BLE001
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(summary)} active runs to {config.output_dir}")
    return 0


def cmd_verify(suite: str, seed: int = 0) -> int:
    if suite != "all" and suite not in SUITES:
        print(f"unknown suite {suite!r}; choose from {['all', *SUITES]}", file=sys.stderr)
        return 2
    checks, ok = run_suite(suite, seed)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"[{status}] {c.name:<{width}}  {c.detail}")
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return 0 if ok else 1


def cmd_bench(n: int, d: int, k: int, r_frac: float, out: str | None = None) -> int:
    result = run_bench(n, d, k, r_frac)
    text = json.dumps(result, indent=2)
    if out:
        Path(out).write_text(text)
    print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="glister", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run selection + training experiments")
    p_run.add_argument("--config", required=True)

    p_active = sub.add_parser("active", help="run active-learning experiments")
    p_active.add_argument("--config", required=True)

    p_verify = sub.add_parser("verify", help="run a property/oracle suite")
    p_verify.add_argument("--suite", required=True)
    p_verify.add_argument("--seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="time selection and training")
    p_bench.add_argument("--n", type=int, default=5000)
    p_bench.add_argument("--d", type=int, default=20)
    p_bench.add_argument("--k", type=int, default=500)
    p_bench.add_argument("--r-frac", type=float, default=0.03)
    p_bench.add_argument("--out", default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "active":
        return cmd_active(args.config)
    if args.command == "verify":
        return cmd_verify(args.suite, args.seed)
    if args.command == "bench":
        return cmd_bench(args.n, args.d, args.k, args.r_frac, args.out)
    parser.error(f"unknown command {args.command}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
