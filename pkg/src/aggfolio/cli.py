"""``aggfolio`` command line.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 invariant
violation (including a failed ``verify``).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .config import OUTPUT_DIR_ENV, load_config
from .errors import AggfolioError

log = logging.getLogger("aggfolio")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aggfolio",
        description="Aggregate expert portfolios online and report on the result.",
        epilog=f"The output directory defaults to ${OUTPUT_DIR_ENV}, then ./aggfolio-out.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "backtest": "run the full pipeline and write series, weights, holdings and stats",
        "importance": "leave-one-out expert importance of the aggregated portfolio",
        "verify": "regret checks against the brute-force oracle",
        "synth": "write a synthetic panel and synthetic expert forecasts",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("-c", "--config", required=True, help="experiment config (JSON)")
        p.add_argument("-o", "--output-dir", help="overrides the config and the environment")
        p.add_argument("-q", "--quiet", action="store_true", help="only report errors")
        if name != "synth":
            p.add_argument(
                "--threads", type=_positive_int, default=os.cpu_count() or 1,
                help="cap on worker threads (default: CPU count)",
            )
        if name in ("backtest", "importance"):
            p.add_argument("--figures", action="store_true", help="also render PNG figures")
    return parser


def _run(args) -> int:
    from . import pipeline

    cfg = load_config(args.config)
    if args.command == "backtest":
        report = pipeline.run_backtest(cfg, args.output_dir, args.threads, args.figures)
        log.info("wrote %d files to %s", len(report.files), report.out_dir)
        for row in report.stats.itertuples(index=False):
            log.info("%-12s sharpe %7.3f  ann_ret %7.4f", row.strategy, row.sharpe, row.ann_ret)
    elif args.command == "importance":
        table = pipeline.run_importance(cfg, args.output_dir, args.threads, args.figures)
        sharpe = table[table["indicator"] == "sharpe"]
        for row in sharpe.itertuples(index=False):
            log.info("%-12s sharpe importance %7.3f%s", row.expert, row.importance,
                     "  (near zero)" if row.near_zero else "")
    elif args.command == "verify":
        table, ok = pipeline.run_verify(cfg, args.output_dir, args.threads)
        for row in table.itertuples(index=False):
            status = "info" if not row.asserted else ("PASS" if row.passed else "FAIL")
            log.info("[%s] %s: %s = %.6g", status, row.scenario, row.name, row.value)
        if not ok:
            log.error("verification failed")
            return EXIT_INVARIANT
    elif args.command == "synth":
        files = pipeline.run_synth(cfg, args.output_dir)
        log.info("wrote %s", ", ".join(files))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr
    )
    try:
        return _run(args)
    except AggfolioError as exc:
        log.error("error: %s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
