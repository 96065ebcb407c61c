"""Command-line front end: run experiment matrices and summarize logs.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .aggregators import RULE_NAMES
from .attacks import ATTACK_NAMES
from .config import ConfigError, ExperimentConfig, config_hash, load_config
from .harness import run_matrix, summarize


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedspectral",
        description="Deterministic Byzantine-robust federated-learning workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute the rules x attacks x seeds matrix")
    run.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
    run.add_argument("--out", help="output directory (overrides config output_dir)")
    run.add_argument("--seed", type=int, help="replace the config's seed list with one seed")
    run.add_argument("--filter", help="subset cells, e.g. rule=multi_krum,attack=sign_flip")
    run.add_argument("--jobs", type=int, default=1, help="parallel cells (default 1)")

    summ = sub.add_parser("summarize", help="regenerate tables and curves from logs")
    summ.add_argument("--out", required=True, help="output directory holding logs/")

    val = sub.add_parser("validate-config", help="check a config file and print its hash")
    val.add_argument("--config", required=True)

    sub.add_parser("list-rules", help="print the stable rule names")
    sub.add_parser("list-attacks", help="print the stable attack names")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "list-rules":
            print("\n".join(RULE_NAMES))
            return 0
        if args.command == "list-attacks":
            print("\n".join(ATTACK_NAMES))
            return 0
        if args.command == "validate-config":
            cfg = load_config(args.config)
            print(f"OK config_hash={config_hash(cfg)}")
            return 0
        if args.command == "run":
            cfg = load_config(args.config) if args.config else ExperimentConfig()
            if args.seed is not None:
                cfg.seeds = [args.seed]
            cfg.validate()
            out = args.out or cfg.output_dir
            paths = run_matrix(cfg, out, jobs=args.jobs, filter_expr=args.filter)
            summarize(out)
            print(f"wrote {len(paths)} cell logs under {out}")
            return 0
        if args.command == "summarize":
            written = summarize(args.out)
            print(f"wrote {len(written)} summary files under {args.out}")
            return 0
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
