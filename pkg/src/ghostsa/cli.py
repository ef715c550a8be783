"""Command line entry point: ``ghostsa run | check | bench-estimator``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import checks, harness
from .ghost import ConfigError
from .testbed.idx import IdxFormatError


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config)
    out = Path(args.output) if args.output else harness.resolve_output_dir(cfg)
    ts = harness.run_trials(cfg, workers=args.workers)
    manifest = harness.emit_outputs(ts, out, charts=not args.no_charts)
    for key, path in manifest.items():
        print(f"{key}: {path}")
    if ts.excluded:
        print(f"excluded trials (aborted): {ts.excluded}")
    return 0


def _cmd_check(args) -> int:
    results = checks.run_suite(args.suite, seed=args.seed)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def _cmd_bench(args) -> int:
    cfg = harness.load_config(args.config)
    out = Path(args.output) if args.output else harness.resolve_output_dir(cfg)
    rows = harness.bench_estimator(cfg, workers=args.workers)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bench.csv"
    path.write_text(harness.bench_csv(rows))
    print(f"{'estimator':>9} {'p_geo':>6} {'point':>5} {'bias_z':>8} {'cov_trace':>10} {'work':>10}")
    for row in rows:
        print(f"{row['estimator']:>9} {str(row['p_geo']):>6} {row['point']:>5} {row['max_bias_z']:8.2f} "
              f"{row['cov_trace']:10.4g} {row['work_mean']:10.4g}")
    print(f"bench: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ghostsa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the configured trials and write CSV files and charts")
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--workers", type=int, default=None, help="parallel trial processes (overrides config)")
    p.add_argument("--output", help=f"output directory (default: ${harness.OUTPUT_ROOT_ENV}/<output_dir>)")
    p.add_argument("--no-charts", action="store_true", help="skip SVG charts")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("check", help="run an invariant suite")
    p.add_argument("--suite", required=True, choices=checks.SUITES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("bench-estimator", help="bias, variance and work of the estimator across p_geo")
    p.add_argument("--config", required=True, help="TOML experiment file (uses its [bench] table)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output", help="output directory for bench.csv")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
