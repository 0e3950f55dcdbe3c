"""Command-line front end: ``run``, ``validate`` and ``presets list``."""
from __future__ import annotations

import argparse
import json
import sys

from . import runner, scenario


def _load(path: str) -> dict | None:
    try:
        return scenario.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return None


def cmd_validate(args) -> int:
    doc = _load(args.file)
    if doc is None:
        return 2
    diags = scenario.validate(doc)
    for d in diags:
        print(d)
    if not diags:
        print(f"{args.file}: ok")
    return 1 if diags else 0


def cmd_run(args) -> int:
    doc = _load(args.file)
    if doc is None:
        return 2
    if args.seed is not None:
        doc["seed"] = args.seed
    diags = scenario.validate(doc)
    if diags:
        for d in diags:
            print(d, file=sys.stderr)
        return 2
    report = runner.run(doc, args.out, threads=args.threads)
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        extra = "" if c.applicable else "  (not applicable)"
        val = "" if c.value is None else f"  {c.value:.3e}"
        tol = "" if c.tolerance is None else f" <= {c.tolerance:.1e}"
        print(f"{status}  {c.name}{val}{tol}{extra}")
    for a in report.aborts:
        print(f"abort: {a}")
    return 0 if report.passed else 1


def cmd_presets(args) -> int:
    for name, desc in scenario.PRESETS.items():
        print(f"{name:20s} {desc}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bohmfermion",
                                description="Guidance trajectories for fermionic fields")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a scenario file")
    r.add_argument("file")
    r.add_argument("--out", metavar="DIR", help="artifact directory")
    r.add_argument("--threads", metavar="N", type=int, default=1)
    r.add_argument("--seed", metavar="S", type=int, help="overrides the scenario seed")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a scenario file without running it")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)
    pr = sub.add_parser("presets", help="named initial states")
    pr_sub = pr.add_subparsers(dest="action", required=True)
    pr_sub.add_parser("list").set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
