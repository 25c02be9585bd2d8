"""Command-line entry point: ``protolab run|sweep|explain``."""

from __future__ import annotations

import argparse
import json
import sys

from protolab.errors import ConfigError
from protolab.protocols import REGISTRY, get_protocol
from protolab.runner import parse_seed_range, run, sweep
from protolab.scenario import load_scenario


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def cmd_run(args) -> int:
    scenario = load_scenario(args.file)
    try:
        report = run(scenario, args.seed, args.trace_dir, args.force)
    except FileExistsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _print(report.summary())
    return 0 if report.passed else 1


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.file)
    report = sweep(scenario, parse_seed_range(args.seeds), args.jobs)
    _print(report.summary())
    return 0 if report.passed else 1


def cmd_explain(args) -> int:
    proto = get_protocol(args.protocol)
    print(f"{proto.name}: {proto.summary}\n")
    print("protocol_params:")
    for name, info in proto.params_model.model_fields.items():
        default = "required" if info.is_required() else f"default {info.get_default()!r}"
        kind = info.annotation if isinstance(info.annotation, type) else None
        shown = kind.__name__ if kind else str(info.annotation).replace("typing.", "")
        print(f"  {name}: {shown} ({default})")
    print("\ninvariants (* = checked when a scenario lists no expectations):")
    for name, (desc, _) in proto.checks.items():
        mark = "*" if name in proto.default_checks else " "
        print(f" {mark} {name}: {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protolab", description="Deterministic distributed-protocol lab.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("file")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--trace-dir", default=".")
    r.add_argument("--force", action="store_true", help="overwrite an existing trace file")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario over a seed range")
    s.add_argument("file")
    s.add_argument("--seeds", required=True, help="inclusive range A..B")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("explain", help="describe a protocol's parameters and invariants")
    e.add_argument("protocol", choices=sorted(REGISTRY))
    e.set_defaults(func=cmd_explain)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
