"""Command-line entry point: ``appraisal-dist [stage] --config exp.yaml``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import AppraisalError, ConfigError
from .pipeline import STAGES, Pipeline

logger = logging.getLogger("appraisal_dist")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="appraisal-dist",
        description="Evaluate predicted appraisal rating distributions against human annotations.",
    )
    p.add_argument("stage_arg", nargs="?", metavar="STAGE", choices=(*STAGES, "run"),
                   help=f"stage to run: {', '.join(STAGES)} or run (default)")
    p.add_argument("--config", required=True, help="experiment YAML file")
    p.add_argument("--stage", choices=(*STAGES, "run"), help="same as the positional STAGE")
    p.add_argument("--workers", type=int, help="worker threads for sampling and scoring")
    p.add_argument("--cache-dir", help="reply cache directory")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--group-by", action="append", help="profile field for group variance (repeatable)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.stage and args.stage_arg and args.stage != args.stage_arg:
        print(f"error: conflicting stages {args.stage_arg!r} and {args.stage!r}", file=sys.stderr)
        return ConfigError.exit_code
    stage = args.stage or args.stage_arg or "run"
    try:
        cfg = load_config(args.config, workers=args.workers, cache_dir=args.cache_dir, seed=args.seed, out=args.out)
        if args.group_by:
            cfg.analysis.group_by = args.group_by
        pipeline = Pipeline(cfg)
        pipeline.run(None if stage == "run" else [stage])
    except AppraisalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(f"{stage}: done; artifacts in {cfg.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
