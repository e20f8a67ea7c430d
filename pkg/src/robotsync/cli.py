"""Command line: run presets or scenario files, compare bundles, validate files."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import analysis, runner, scenario

log = logging.getLogger("robotsync")


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise scenario.ScenarioError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = scenario.parse_value(value)
    return out


def cmd_run(args) -> int:
    try:
        sc = scenario.load(args.source, _parse_set(args.set), seed=args.seed, duration=args.duration)
    except (scenario.ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("runs") / sc.name
    res = runner.simulate(sc)
    report = runner.write_bundle(res, out)
    sys.stdout.write(analysis.report_text(report))
    print(f"bundle written to {out}")
    if res.violation:
        print(f"invariant violated: {res.violation}", file=sys.stderr)
    return res.exit_status


def cmd_compare(args) -> int:
    try:
        a = json.loads((Path(args.dir_a) / "report.json").read_text())
        b = json.loads((Path(args.dir_b) / "report.json").read_text())
        delta = analysis.compare(a, b)
    except (OSError, analysis.BundleMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(analysis.compare_text(delta))
    if args.json:
        Path(args.json).write_text(json.dumps(delta, sort_keys=True, indent=1) + "\n")
    return 0


def cmd_list(args) -> int:
    for name, desc in scenario.list_presets():
        print(f"{name:20s} {desc}")
    return 0


def cmd_validate(args) -> int:
    try:
        sc = scenario.validate(args.file)
    except (scenario.ScenarioError, OSError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {sc.name} ({len(sc.publishers)} publishers, ptp {'on' if sc.ptp.enabled else 'off'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robotsync", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log overrides and overruns")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or scenario file")
    r.add_argument("source", help="preset id or scenario file (TOML or JSON)")
    r.add_argument("--seed", type=lambda s: int(s, 0), default=None)
    r.add_argument("--duration", type=float, default=None, help="simulated seconds")
    r.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario field by dotted path; repeatable")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="side-by-side statistics of two bundles")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--json", default=None, help="also write the delta report as JSON")
    c.set_defaults(func=cmd_compare)

    lp = sub.add_parser("list-presets", help="list the built-in experiments")
    lp.set_defaults(func=cmd_list)

    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
