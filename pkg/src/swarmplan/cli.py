"""Command line front end: validate, run, and batch scenario files.

Exit codes: 0 when the requested work succeeded (for `run`, when the
run's success flag is true), 2 when the scenario failed validation,
3 when a run finished with failures.
"""
from __future__ import annotations

import argparse
import json
import sys

from .runner import batch, run
from .scenario import ScenarioError, bundled_names, load_scenario


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmplan",
        description="Decentralized multi-robot trajectory planning harness. "
                    "SCENARIO is a TOML file path or a bundled name "
                    f"({', '.join(bundled_names())}).")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one seeded run")
    p_run.add_argument("scenario", metavar="SCENARIO")
    p_run.add_argument("--out", default=None, metavar="DIR",
                       help="write trajectories.csv, events.csv, report.json "
                            "and overview.svg here")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's seed")

    p_batch = sub.add_parser(
        "batch", help="run seeds 0..N-1 with spawn zones randomized")
    p_batch.add_argument("scenario", metavar="SCENARIO")
    p_batch.add_argument("--seeds", type=int, required=True, metavar="N")
    p_batch.add_argument("--out", default=None, metavar="DIR",
                         help="write batch_report.json here")

    p_val = sub.add_parser("validate", help="parse and check a scenario file")
    p_val.add_argument("scenario", metavar="SCENARIO")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"{scenario.name}: {len(scenario.robots)} robots, "
              f"{len(scenario.world.walls)} walls, {len(scenario.world.discs)} discs, "
              f"duration {scenario.duration:g} s: ok")
        return 0

    if args.command == "run":
        report = run(scenario, out_dir=args.out, seed=args.seed)
        print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
        return 0 if report.success else 3

    if args.seeds < 1:
        print("--seeds must be >= 1", file=sys.stderr)
        return 2
    report = batch(scenario, args.seeds, out_dir=args.out)
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
