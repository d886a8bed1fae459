"""Command-line surface.

Subcommands mirror the diagnostics registry plus ``sweep`` and
``replay``.  Exit codes: 0 success, 2 validation error, 3 numerical
failure (singularity or divergence), 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import BudgetExceededError, NumericalError, ValidationError
from .harness import DIAGNOSTICS, load_config, replay, run, sweep


def _add_common(p):
    p.add_argument("--config", required=True, help="path to a key = value config")
    p.add_argument("--seed", type=int, default=None, help="override disorder.seed")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--format", choices=("csv", "json"), default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="andlab",
        description="Numerical diagnostics for random Schrodinger operators "
                    "on discrete graphs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in sorted(DIAGNOSTICS):
        p = sub.add_parser(name, help=f"run the {name} diagnostic")
        _add_common(p)
    p = sub.add_parser("sweep", help="run a diagnostic over a parameter sweep")
    _add_common(p)
    p.add_argument("--path", required=True, help="dotted config path to sweep")
    p.add_argument("--values", required=True,
                   help="comma-separated values for the swept field")
    p = sub.add_parser("replay", help="re-run a manifest and byte-compare")
    p.add_argument("--manifest", required=True)
    return parser


def _parse_scalar(tok):
    try:
        return json.loads(tok)
    except json.JSONDecodeError:
        return tok


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            report = replay(args.manifest)
            print(json.dumps({"replay": report}, indent=2, sort_keys=True))
            return 0
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.disorder["seed"] = args.seed
        if args.command == "sweep":
            values = [_parse_scalar(t) for t in args.values.split(",")]
            manifests, rows = sweep(cfg, args.path, values,
                                    args.out or "runs/sweep",
                                    args.workers, args.format)
            print(json.dumps({"sub_runs": len(manifests)}, indent=2))
            return 0
        cfg.diagnostic["name"] = args.command
        manifest = run(cfg, args.out, args.workers, args.format)
        print(json.dumps({k: manifest[k] for k in
                          ("diagnostic", "outputs", "master_seed")},
                         indent=2, sort_keys=True))
        return 0
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except BudgetExceededError as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
