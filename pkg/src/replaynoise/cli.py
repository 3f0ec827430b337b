"""Command-line entry point.

    replay-noise <command> [--config PATH] [--reduced]
                 [--mode multitask|baseline|both] [--seed N]

Commands: synth featurize train codes backend score eval all.
Without --config every setting takes its documented default; --reduced,
--mode, and --seed override the corresponding config keys (--seed sets the
training seed).
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import COMMANDS, ConfigError, PipelineConfig, parse_config, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="replay-noise",
        description="Replay spoofing detection pipeline on a synthetic channel corpus.",
    )
    p.add_argument("command", choices=COMMANDS, help="pipeline stage to run")
    p.add_argument("--config", metavar="PATH", help="flat `key = value` config file")
    p.add_argument("--reduced", action="store_true",
                   help="small model/features for fast runs (100x129 input, widths / 4)")
    p.add_argument("--mode", choices=["multitask", "baseline", "both"],
                   help="which training objective(s) to run")
    p.add_argument("--seed", type=int, metavar="N", help="override the training seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else PipelineConfig()
    except FileNotFoundError as e:
        print(f"error: config file not found: {e.filename}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"error: bad config: {e}", file=sys.stderr)
        return 2
    if args.reduced:
        cfg.reduced = True
    if args.mode is not None:
        cfg.mode = args.mode
    if args.seed is not None:
        cfg.train_seed = args.seed
    return run(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
