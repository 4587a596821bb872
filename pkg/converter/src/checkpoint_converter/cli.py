"""satw-convert: convert / crosscheck commands, JSON reports on stdout."""

from __future__ import annotations

import argparse
import json
import sys

from .convert import ConversionError, convert, crosscheck
from .name_map import NameMap


def cmd_convert(args) -> int:
    nmap = NameMap.from_json(args.name_map) if args.name_map else None
    report = convert(args.src, args.arch, args.out, name_map=nmap)
    print(json.dumps(report, indent=2))
    return 0


def cmd_crosscheck(args) -> int:
    nmap = NameMap.from_json(args.name_map) if args.name_map else None
    report = crosscheck(args.src, args.satw, seed=args.seed, name_map=nmap)
    print(json.dumps(report, indent=2))
    return 0 if report["ok"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satw-convert")
    sub = parser.add_subparsers(dest="command", required=True)

    p_conv = sub.add_parser("convert", help="checkpoint -> SATW")
    p_conv.add_argument("--src", required=True, help="torch checkpoint path")
    p_conv.add_argument("--arch", choices=["tiny", "small", "base"], required=True)
    p_conv.add_argument("--out", required=True, help="output .satw path")
    p_conv.add_argument("--name-map", help="JSON NameMap overriding the built-in")
    p_conv.set_defaults(fn=cmd_convert)

    p_check = sub.add_parser("crosscheck",
                             help="compare checkpoint and SATW logits")
    p_check.add_argument("--src", required=True)
    p_check.add_argument("--satw", required=True)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--name-map")
    p_check.set_defaults(fn=cmd_crosscheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        return args.fn(args)
    except (ConversionError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
