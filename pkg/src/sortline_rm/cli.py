"""Command-line front end.

    sortline-rm run --scenario S.json [--trace PATH|-] [--metrics PATH|-] [--seed N] [--no-rm]
    sortline-rm compare --scenario S.json [--metrics PATH|-] [--seed N]
    sortline-rm validate --scenario S.json

Exit codes: 0 success (a safe-stop is a success), 2 invalid scenario, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError, ScenarioError
from .scenario import load_scenario
from .simulation import run_scenario

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3


def _write(dest, text):
    if dest is None:
        return
    if dest == "-":
        sys.stdout.write(text)
        return
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _load(args):
    scenario = load_scenario(args.scenario)
    if getattr(args, "no_rm", False) or getattr(args, "seed", None) is not None:
        scenario = scenario.with_overrides(seed=args.seed,
                                           rm_enabled=False if args.no_rm else None)
    return scenario


def cmd_run(args):
    result = run_scenario(_load(args))
    _write(args.trace, result.trace.dumps())
    _write(args.metrics, result.metrics.dumps())
    return EXIT_OK


def comparison(scenario) -> dict:
    off = run_scenario(scenario.with_overrides(rm_enabled=False)).metrics.to_dict()
    on = run_scenario(scenario.with_overrides(rm_enabled=True)).metrics.to_dict()
    return {
        "scenario": scenario.name,
        "seed": scenario.seed,
        "rm_off": off,
        "rm_on": on,
        "delta_sorted_correct": on["sorted_correct"] - off["sorted_correct"],
    }


def format_comparison(report: dict) -> str:
    off, on = report["rm_off"], report["rm_on"]
    rows = [("metric", "rm_off", "rm_on")]
    for key in ("tokens_in", "sorted_correct", "missorted", "missed", "in_flight",
                "not_admitted", "time_degraded", "final_speed_level", "throughput"):
        rows.append((key, str(off[key]), str(on[key])))
    for key in on["recoveries"]:
        rows.append((f"recoveries.{key}", str(off["recoveries"][key]),
                     str(on["recoveries"][key])))
    w = [max(len(r[i]) for r in rows) for i in range(3)]
    lines = [f"{a:<{w[0]}}  {b:>{w[1]}}  {c:>{w[2]}}" for a, b, c in rows]
    lines.append(f"delta sorted_correct: {report['delta_sorted_correct']:+d}")
    return "\n".join(lines) + "\n"


def cmd_compare(args):
    report = comparison(_load(args))
    if args.metrics:
        _write(args.metrics, json.dumps(report, indent=2) + "\n")
    if args.metrics != "-":
        sys.stdout.write(format_comparison(report))
    return EXIT_OK


def cmd_validate(args):
    scenario = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({scenario.name}, {len(scenario.faults)} fault(s))")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sortline-rm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--trace", help="trace output path, or - for stdout")
    run.add_argument("--metrics", default="-", help="metrics output path, or - for stdout")
    run.add_argument("--seed", type=int)
    run.add_argument("--no-rm", action="store_true", help="force rm_enabled=false")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="run with RMs off and on, side by side")
    cmp_.add_argument("--scenario", required=True)
    cmp_.add_argument("--metrics", help="write the comparison JSON here (- for stdout)")
    cmp_.add_argument("--seed", type=int)
    cmp_.set_defaults(func=cmd_compare, no_rm=False)

    val = sub.add_parser("validate", help="parse and validate only")
    val.add_argument("--scenario", required=True)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ConfigurationError) as exc:
        print(f"invalid scenario {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
