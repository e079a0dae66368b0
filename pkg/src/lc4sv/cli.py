"""``lc4sv <stage> --config <path> [--seed N] [--in <wav> --out <wav>]``

Exit status: 0 on success, 1 on a configuration problem, 2 on any other failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ExperimentConfig, load_config
from .errors import ConfigurationError
from .pipeline import STAGES, process_file, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lc4sv", description=__doc__.splitlines()[0])
    parser.add_argument("stage", choices=STAGES + ("all",))
    parser.add_argument("--config", help="flat key = value experiment config")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--in", dest="in_path", help="input WAV (process stage)")
    parser.add_argument("--out", dest="out_path", help="output WAV (process stage)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; those are configuration errors here.
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.stage == "process":
            if not args.in_path or not args.out_path:
                raise ConfigurationError("process needs --in and --out")
            alpha = process_file(cfg, args.in_path, args.out_path)
            print(f"alpha = {alpha:.1f}")
        elif args.stage == "all":
            for stage in STAGES[:-1]:
                print(run_stage(stage, cfg))
        else:
            print(run_stage(args.stage, cfg))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI maps every failure to an exit code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
