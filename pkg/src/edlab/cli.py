"""Command-line entry point: ``edlab <subcommand> --config FILE --out DIR``.

Exit status is 0 when every declared tolerance passes, 1 when any fails and
2 on usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments
from .config import ConfigError, load_config

COMMANDS = {
    "run": experiments.cmd_run,
    "universality": experiments.cmd_universality,
    "bohmian-convergence": experiments.cmd_bohmian_convergence,
    "hybrid-classical": experiments.cmd_hybrid_classical,
    "maxent-check": experiments.cmd_maxent_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "maxent-check", help="run configuration file")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker threads (default: ${experiments.THREADS_ENV} or 1)")
    p = sub.add_parser("export-plots")
    p.add_argument("run_dir", help="directory written by `edlab run`")
    p.add_argument("--out", default=None, help="output directory (default: RUN_DIR/plots)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-plots":
            summary = experiments.cmd_export_plots(args.run_dir, args.out)
            print(json.dumps({"files": summary["files"]}, indent=2))
            return 0
        cfg = load_config(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "run" and args.out is None:
            raise ValueError("run needs --out")
        report = COMMANDS[args.command](cfg, args.out, threads=args.threads)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"edlab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(json.dumps(experiments._plain(report.summary), sort_keys=True))
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
