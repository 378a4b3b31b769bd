"""Command-line front end.

Subcommands:
  run <scenario-file-or-preset>   execute a scenario and write reports
  list-presets                    show the built-in scenario catalog
  export <preset>                 write a preset as an editable scenario file

Exits 0 on success and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .harness import emit_report, run_scenario
from .scenario import (
    ConfigError,
    get_preset,
    list_presets,
    parse_scenario_file,
    write_scenario_file,
)

EXIT_CONFIG_ERROR = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evrelaysim",
        description="Simulate relay attacks on plug-and-charge sessions "
                    "and the round-trip-time distance-bounding defense.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario")
    run.add_argument("scenario",
                     help="preset name or path to a scenario file")
    run.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    run.add_argument("--runs", type=int, default=None,
                     help="override the number of seeded runs")
    run.add_argument("--out", default=None, metavar="DIR",
                     help="output directory (default: out/<scenario-name>)")
    run.add_argument("--guard", choices=("on", "off"), default=None,
                     help="force the distance-bounding guard on or off")
    run.add_argument("--format", choices=("csv", "text"), default="csv",
                     help="report format (text adds summary.txt)")

    sub.add_parser("list-presets", help="list built-in scenarios")

    export = sub.add_parser("export",
                            help="write a preset as a scenario file")
    export.add_argument("preset", help="preset name")
    export.add_argument("--out", default=None, metavar="FILE",
                        help="output path (default: <preset>.scenario)")
    return parser


def _load_scenario(name_or_path: str):
    if os.path.exists(name_or_path):
        return parse_scenario_file(name_or_path)
    return get_preset(name_or_path)


def _cmd_run(args) -> int:
    sc = _load_scenario(args.scenario)
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if args.runs is not None:
        sc = replace(sc, runs=args.runs)
    if args.guard is not None:
        sc = replace(sc, guard_enabled=args.guard == "on")
    sc.validate()

    report = run_scenario(sc)
    out_dir = args.out or os.path.join("out", sc.name)
    paths = emit_report(report, out_dir, fmt=args.format)
    print(report.summary_text(), end="")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_list_presets() -> int:
    for name, desc in list_presets().items():
        print(f"{name:16s} {desc}")
    return 0


def _cmd_export(args) -> int:
    sc = get_preset(args.preset)
    out = args.out or f"{args.preset}.scenario"
    write_scenario_file(sc, out)
    print(f"wrote {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "list-presets":
            return _cmd_list_presets()
        if args.command == "export":
            return _cmd_export(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
