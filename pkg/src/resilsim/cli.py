"""Command line: ``resilsim check|run|replay``.

Exit status: 0 success, 1 validation or input error, 2 failed experiment
assertion.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from resilsim.contracts import ContractSyntaxError, format_contract, parse_contracts, validate_contract
from resilsim.kernel import UnknownTarget
from resilsim.metrics import TraceError
from resilsim.scenario import ScenarioError, load_scenario, replay, run_scenario, write_trace_dir

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ASSERTION = 2


def cmd_check(args) -> int:
    try:
        text = Path(args.contract).read_text()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        contracts = parse_contracts(text)
    except ContractSyntaxError as exc:
        print(f"{args.contract}:{exc.line}:{exc.column}: syntax error: {exc.message}", file=sys.stderr)
        return EXIT_INVALID
    if not contracts:
        print(f"{args.contract}: no contracts found", file=sys.stderr)
        return EXIT_INVALID
    status = EXIT_OK
    for c in contracts:
        problems = validate_contract(c)
        for p in problems:
            print(f"{args.contract}: contract {c.id}: {p}", file=sys.stderr)
        if problems:
            status = EXIT_INVALID
        elif args.verbose:
            print(format_contract(c), end="")
        else:
            print(f"{c.id}: ok")
    return status


def cmd_run(args) -> int:
    try:
        data = load_scenario(args.scenario)
        result = run_scenario(data, args.seed, args.until)
    except (ScenarioError, UnknownTarget, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.trace_dir:
        write_trace_dir(result, Path(args.trace_dir))
    if args.metrics:
        Path(args.metrics).write_text(result.report.dumps())
    summary = {"scenario": data.get("name", args.scenario), "resilience": float(result.report.resilience)}
    summary["recovery"] = [r.to_json() for r in result.report.recovery]
    if result.experiment is not None:
        summary["experiment"] = result.experiment.to_json()
    print(json.dumps(summary, indent=2, sort_keys=True))
    if result.experiment is not None and not result.experiment.passed:
        for f in result.experiment.failures:
            print(f"assertion failed: {f}", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        report = replay(Path(args.trace))
    except (ScenarioError, TraceError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = report.dumps()
    if args.metrics:
        Path(args.metrics).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resilsim", description="Contract-monitored resilience simulator")
    parser.add_argument("--log-level", default="WARNING", help="python logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="parse and validate a contract file")
    check.add_argument("--contract", required=True, help="contract file")
    check.add_argument("-v", "--verbose", action="store_true", help="print the canonical form")
    check.set_defaults(func=cmd_check)

    run = sub.add_parser("run", help="run a scenario or experiment preset")
    run.add_argument("--scenario", required=True, help="exp1, exp2, or a JSON scenario file")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--until", type=float, default=None, help="simulated horizon in ms")
    run.add_argument("--trace-dir", default=None, help="directory for logs and traces")
    run.add_argument("--metrics", default=None, help="write the metric report JSON here")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("replay", help="recompute metrics from an exported trace directory")
    rep.add_argument("--trace", required=True, help="trace directory written by 'run --trace-dir'")
    rep.add_argument("--metrics", default=None, help="write the report here instead of stdout")
    rep.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
